//! Event-driven schedule of one decoding step over three device lanes.

use serde::Serialize;

use crate::timing::LatencyParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Lane {
    Target,
    Draft,
    Channel,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Interval {
    pub lane: Lane,
    pub start: f64,
    pub end: f64,
    pub label: String,
}

/// Tasks are placed as soon as their dependencies have finished and their
/// lane is free. Each lane runs one task at a time.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StepTimeline {
    pub start: f64,
    pub intervals: Vec<Interval>,
}

impl StepTimeline {
    pub fn new(start: f64) -> Self {
        Self {
            start,
            intervals: Vec::new(),
        }
    }

    /// Schedules a task and returns its index.
    pub fn add(&mut self, lane: Lane, label: impl Into<String>, duration: f64, deps: &[usize]) -> usize {
        let ready = deps
            .iter()
            .map(|&d| self.intervals[d].end)
            .fold(self.start, f64::max);
        let free = self
            .intervals
            .iter()
            .filter(|i| i.lane == lane)
            .map(|i| i.end)
            .fold(self.start, f64::max);
        let start = ready.max(free);
        self.intervals.push(Interval {
            lane,
            start,
            end: start + duration,
            label: label.into(),
        });
        self.intervals.len() - 1
    }

    pub fn end(&self) -> f64 {
        self.intervals.iter().map(|i| i.end).fold(self.start, f64::max)
    }

    /// Latest lane end minus step start.
    pub fn total(&self) -> f64 {
        self.end() - self.start
    }

    pub fn lane(&self, lane: Lane) -> impl Iterator<Item = &Interval> {
        self.intervals.iter().filter(move |i| i.lane == lane)
    }

    pub fn find(&self, label: &str) -> Option<&Interval> {
        self.intervals.iter().find(|i| i.label == label)
    }

    /// Mirror step: target prefix, early-exit rendezvous, target suffix in
    /// parallel with window drafting and tree building, final rendezvous.
    pub fn mirror(params: &LatencyParams, start: f64, window_steps: usize, tree_steps: &[usize]) -> Self {
        let mut tl = Self::new(start);
        let prefix = tl.add(Lane::Target, "target_prefix", params.prefix_time(), &[]);
        let ee = tl.add(Lane::Channel, "rv_ee", params.rv_ee_cost(), &[prefix]);
        let suffix = tl.add(Lane::Target, "target_suffix", params.overlap_budget(), &[ee]);
        let mut last_draft = ee;
        if window_steps > 0 {
            let d = window_steps as f64 * params.draft_step_time();
            last_draft = tl.add(Lane::Draft, "draft_window", d, &[ee]);
        }
        let width = params.branch_parallelism.unwrap_or(tree_steps.len()).max(1);
        for (w, wave) in tree_steps.chunks(width).enumerate() {
            let steps = wave.iter().copied().max().unwrap_or(0);
            if steps == 0 {
                continue;
            }
            let d = steps as f64 * params.tree_step_time();
            last_draft = tl.add(Lane::Draft, format!("tree_wave_{w}"), d, &[last_draft]);
        }
        tl.add(Lane::Channel, "rv_fv", params.rv_fv_cost(), &[suffix, last_draft]);
        tl
    }

    /// Vanilla step: draft the window, then one full target pass.
    pub fn vanilla(params: &LatencyParams, start: f64, window_steps: usize) -> Self {
        let mut tl = Self::new(start);
        let d = tl.add(Lane::Draft, "draft_window", window_steps as f64 * params.draft_step_time(), &[]);
        tl.add(Lane::Target, "target_full", params.target_time(), &[d]);
        tl
    }

    /// One target-only token.
    pub fn autoregressive(params: &LatencyParams, start: f64) -> Self {
        let mut tl = Self::new(start);
        tl.add(Lane::Target, "target_full", params.target_time(), &[]);
        tl
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timing::{mirror_step_latency, tree_time, vanilla_step_latency};

    #[test]
    fn mirror_structure() {
        let mut p = LatencyParams::unit_layers(8, 4, 0.1);
        p.draft_step_compute = 0.5;
        let tl = StepTimeline::mirror(&p, 10.0, 3, &[2, 4]);
        let prefix = tl.find("target_prefix").unwrap();
        let ee = tl.find("rv_ee").unwrap();
        let window = tl.find("draft_window").unwrap();
        assert_eq!(prefix.end, ee.start);
        assert_eq!(window.start, ee.end);
        assert_eq!(tl.find("target_suffix").unwrap().start, ee.end);
        let dg = 3.0 * 0.5 + tree_time(&p, &[2, 4]);
        assert!((tl.total() - mirror_step_latency(&p, dg).total).abs() < 1e-12);
        assert_eq!(tl.lane(Lane::Channel).count(), 2);
    }

    #[test]
    fn exposed_draft_delays_final_rendezvous() {
        let mut p = LatencyParams::unit_layers(8, 4, 0.1);
        p.draft_step_compute = 1.0;
        let tl = StepTimeline::mirror(&p, 0.0, 7, &[6]);
        assert!((tl.total() - (4.0 + 0.1 + 13.0 + 0.1)).abs() < 1e-12);
        let fv = tl.find("rv_fv").unwrap();
        assert_eq!(fv.start, tl.find("tree_wave_0").unwrap().end);
    }

    #[test]
    fn vanilla_and_ar() {
        let mut p = LatencyParams::unit_layers(8, 4, 0.1);
        p.draft_step_compute = 0.5;
        let tl = StepTimeline::vanilla(&p, 0.0, 4);
        assert_eq!(tl.total(), vanilla_step_latency(&p, 2.0));
        assert_eq!(StepTimeline::autoregressive(&p, 3.0).total(), 8.0);
    }
}
