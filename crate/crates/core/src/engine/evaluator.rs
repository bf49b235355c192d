//! Runtime hook consulted whenever a pipeline finishes a stage.

use crate::lambda::Lambda;
use crate::protocol::{Pipeline, StageDraft};

use super::timeline::{Micros, TaskRecord};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AppendPlan {
    /// Windows the appended stages introduce.
    pub new_lambdas: Vec<Lambda>,
    pub stages: Vec<StageDraft>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StagePlan {
    Continue,
    Append(AppendPlan),
    Terminate(String),
}

pub struct StageContext<'a> {
    pub pipeline: &'a Pipeline,
    pub stage_index: usize,
    /// Records of the completed stage's tasks, in task order.
    pub records: &'a [TaskRecord],
    pub now_us: Micros,
}

pub trait StageEvaluator {
    fn on_stage_complete(&mut self, ctx: &StageContext<'_>) -> StagePlan;
}

/// Never changes anything.
#[derive(Debug, Clone, Copy, Default)]
pub struct AlwaysContinue;

impl StageEvaluator for AlwaysContinue {
    fn on_stage_complete(&mut self, _ctx: &StageContext<'_>) -> StagePlan {
        StagePlan::Continue
    }
}
