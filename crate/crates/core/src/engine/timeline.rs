//! Event log of a campaign on the virtual clock, and the overhead accounting derived from it.
//!
//! Time is kept in integer microseconds so that the accounting identity holds
//! exactly; it is converted to seconds only at the edges.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::protocol::TaskId;

pub type Micros = u64;

pub fn to_micros(seconds: f64) -> Micros {
    (seconds.max(0.0) * 1e6).round() as Micros
}

pub fn to_seconds(us: Micros) -> f64 {
    us as f64 / 1e6
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    Submit,
    Start,
    Done,
    Failed,
    StageComplete,
    StagesAppended,
    PipelineTerminated,
    PipelineComplete,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Submit => "SUBMIT",
            EventKind::Start => "START",
            EventKind::Done => "DONE",
            EventKind::Failed => "FAILED",
            EventKind::StageComplete => "STAGE_COMPLETE",
            EventKind::StagesAppended => "STAGES_APPENDED",
            EventKind::PipelineTerminated => "PIPELINE_TERMINATED",
            EventKind::PipelineComplete => "PIPELINE_COMPLETE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time_us: Micros,
    pub kind: EventKind,
    pub task_id: Option<TaskId>,
    pub pipeline_id: u32,
    pub stage_label: String,
    pub generation: Option<u32>,
}

/// Where a stretch of the virtual clock went.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Category {
    TaskExecution,
    Framework,
    Runtime,
    Launch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start_us: Micros,
    pub end_us: Micros,
    pub category: Category,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub index: u32,
    pub start_us: Micros,
    pub end_us: Micros,
    /// Tasks launched together.
    pub width: usize,
    pub retries: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    Done,
    FailedThenRetried,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: TaskId,
    pub submit_us: Micros,
    pub start_us: Micros,
    pub end_us: Micros,
    pub attempts: u32,
    pub outcome: Outcome,
    /// Execution time of the successful attempt.
    pub duration_us: Micros,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CampaignTimeline {
    pub events: Vec<Event>,
    pub segments: Vec<Segment>,
    pub generations: Vec<GenerationRecord>,
    pub complete: bool,
}

impl CampaignTimeline {
    pub fn end_us(&self) -> Micros {
        self.segments.last().map_or(0, |s| s.end_us)
    }

    /// Highest number of tasks running at the same instant, replayed from the event log.
    pub fn peak_concurrency(&self) -> usize {
        let mut running = 0usize;
        let mut peak = 0usize;
        for e in &self.events {
            match e.kind {
                EventKind::Start => {
                    running += 1;
                    peak = peak.max(running);
                }
                EventKind::Done | EventKind::Failed => running = running.saturating_sub(1),
                _ => {}
            }
        }
        peak
    }

    pub fn failed_attempts(&self) -> usize {
        self.events.iter().filter(|e| e.kind == EventKind::Failed).count()
    }

    /// CSV with columns `event_time_s, event, task_id, pipeline_id, stage_label, generation`.
    pub fn write_csv<W: Write>(&self, out: W, extra: &[(&str, &str)]) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["event_time_s", "event", "task_id", "pipeline_id", "stage_label", "generation"];
        header.extend(extra.iter().map(|(k, _)| *k));
        w.write_record(&header)?;
        for e in &self.events {
            let mut row = vec![
                format!("{:.6}", to_seconds(e.time_us)),
                e.kind.as_str().to_string(),
                e.task_id.map(|t| t.to_string()).unwrap_or_default(),
                e.pipeline_id.to_string(),
                e.stage_label.clone(),
                e.generation.map(|g| g.to_string()).unwrap_or_default(),
            ];
            row.extend(extra.iter().map(|(_, v)| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Time to completion split into task execution and three overhead categories. Seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverheadBreakdown {
    pub task_execution_time: f64,
    pub framework_overhead: f64,
    pub runtime_overhead: f64,
    pub launch_overhead: f64,
    pub total_time_to_completion: f64,
}

/// Same breakdown in exact microseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverheadMicros {
    pub task_execution: Micros,
    pub framework: Micros,
    pub runtime: Micros,
    pub launch: Micros,
    pub total: Micros,
}

impl OverheadMicros {
    pub fn to_seconds(self) -> OverheadBreakdown {
        OverheadBreakdown {
            task_execution_time: to_seconds(self.task_execution),
            framework_overhead: to_seconds(self.framework),
            runtime_overhead: to_seconds(self.runtime),
            launch_overhead: to_seconds(self.launch),
            total_time_to_completion: to_seconds(self.total),
        }
    }
}

impl OverheadBreakdown {
    /// Share of TTC spent in framework and runtime middleware.
    pub fn middleware_share(&self) -> f64 {
        if self.total_time_to_completion == 0.0 {
            0.0
        } else {
            (self.framework_overhead + self.runtime_overhead) / self.total_time_to_completion
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TimelineError {
    #[error("timeline is incomplete")]
    Incomplete,
    #[error("timeline segments are not contiguous at {0} us")]
    Gap(Micros),
}

pub fn measure_overheads_micros(timeline: &CampaignTimeline) -> Result<OverheadMicros, TimelineError> {
    if !timeline.complete {
        return Err(TimelineError::Incomplete);
    }
    let mut acc = OverheadMicros::default();
    let mut cursor = 0;
    for s in &timeline.segments {
        if s.start_us != cursor {
            return Err(TimelineError::Gap(cursor));
        }
        cursor = s.end_us;
        let d = s.end_us - s.start_us;
        match s.category {
            Category::TaskExecution => acc.task_execution += d,
            Category::Framework => acc.framework += d,
            Category::Runtime => acc.runtime += d,
            Category::Launch => acc.launch += d,
        }
    }
    acc.total = cursor;
    Ok(acc)
}

/// Partitions the campaign span into TTX and the three overhead categories.
pub fn measure_overheads(timeline: &CampaignTimeline) -> Result<OverheadBreakdown, TimelineError> {
    measure_overheads_micros(timeline).map(OverheadMicros::to_seconds)
}

pub const OVERHEAD_CSV_HEADER: [&str; 8] =
    ["run_id", "n_protocols", "total_cores", "ttx_s", "framework_s", "runtime_s", "launch_s", "ttc_s"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverheadRow {
    pub run_id: String,
    pub n_protocols: usize,
    pub total_cores: u32,
    pub breakdown: OverheadBreakdown,
}

/// One row per run, with optional trailing `(name, value)` columns.
pub fn write_overhead_csv<W: Write>(out: W, rows: &[(OverheadRow, Vec<(String, String)>)]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = OVERHEAD_CSV_HEADER.iter().map(|s| s.to_string()).collect();
    if let Some((_, extra)) = rows.first() {
        header.extend(extra.iter().map(|(k, _)| k.clone()));
    }
    w.write_record(&header)?;
    for (r, extra) in rows {
        let b = r.breakdown;
        let mut row = vec![
            r.run_id.clone(),
            r.n_protocols.to_string(),
            r.total_cores.to_string(),
            format!("{:.6}", b.task_execution_time),
            format!("{:.6}", b.framework_overhead),
            format!("{:.6}", b.runtime_overhead),
            format!("{:.6}", b.launch_overhead),
            format!("{:.6}", b.total_time_to_completion),
        ];
        row.extend(extra.iter().map(|(_, v)| v.clone()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
