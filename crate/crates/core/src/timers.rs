//! Named wall-clock timers, recorded from any thread and aggregated into a report.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TimerGroup {
    Init,
    Memory,
    Physics,
    Io,
}

impl TimerGroup {
    pub fn name(self) -> &'static str {
        match self {
            TimerGroup::Init => "INIT",
            TimerGroup::Memory => "MEMORY",
            TimerGroup::Physics => "PHYSICS",
            TimerGroup::Io => "IO",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TimerScope {
    Host,
    Device(usize),
}

impl fmt::Display for TimerScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimerScope::Host => f.write_str("host"),
            TimerScope::Device(d) => write!(f, "device{d}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimerRecord {
    pub name: String,
    pub group: TimerGroup,
    pub scope: TimerScope,
    pub elapsed_ns: u64,
}

/// Thread-safe sink for timer records.
#[derive(Debug, Default)]
pub struct TimerRegistry {
    records: Mutex<Vec<TimerRecord>>,
}

impl TimerRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, name: &str, group: TimerGroup, scope: TimerScope, elapsed: Duration) {
        let elapsed_ns = u64::try_from(elapsed.as_nanos()).unwrap_or(u64::MAX);
        self.records
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(TimerRecord {
                name: name.to_string(),
                group,
                scope,
                elapsed_ns,
            });
    }

    /// Times `f` and records it under `(name, group, scope)`.
    pub fn time<R>(
        &self,
        name: &str,
        group: TimerGroup,
        scope: TimerScope,
        f: impl FnOnce() -> R,
    ) -> R {
        let start = Instant::now();
        let out = f();
        self.record(name, group, scope, start.elapsed());
        out
    }

    pub fn records(&self) -> Vec<TimerRecord> {
        self.records.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimerSummary {
    pub name: String,
    pub group: TimerGroup,
    pub scope: TimerScope,
    pub count: u64,
    pub total_ns: u64,
    pub mean_ns: u64,
}

/// Aggregates by `(name, group, scope)`, sorted by group, name, scope.
pub fn aggregate_timers(records: &[TimerRecord]) -> Vec<TimerSummary> {
    let mut acc: BTreeMap<(TimerGroup, &str, TimerScope), (u64, u64)> = BTreeMap::new();
    for r in records {
        let e = acc.entry((r.group, r.name.as_str(), r.scope)).or_default();
        e.0 += 1;
        e.1 = e.1.saturating_add(r.elapsed_ns);
    }
    acc.into_iter()
        .map(|((group, name, scope), (count, total_ns))| TimerSummary {
            name: name.to_string(),
            group,
            scope,
            count,
            total_ns,
            mean_ns: total_ns / count,
        })
        .collect()
}

pub const TIMER_HEADER: &str = "name,group,scope,count,total_ns,mean_ns";

/// CSV table of the aggregated records.
pub fn report_timers(records: &[TimerRecord]) -> String {
    let mut out = String::from(TIMER_HEADER);
    out.push('\n');
    for s in aggregate_timers(records) {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            s.name,
            s.group.name(),
            s.scope,
            s.count,
            s.total_ns,
            s.mean_ns
        );
    }
    out
}

/// Writes the report to `<outdir>/timers.csv` and returns its text.
pub fn write_timer_report(records: &[TimerRecord], outdir: &Path) -> std::io::Result<String> {
    let text = report_timers(records);
    std::fs::write(outdir.join("timers.csv"), &text)?;
    Ok(text)
}
