//! Mobility tree construction: day nodes over period nodes over check-in
//! leaves, built from a trajectory prefix.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::types::CheckIn;

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("slots_per_day must divide 24, got {0}")]
    BadSlotCount(usize),
    #[error("cannot build a mobility tree from an empty prefix")]
    EmptyPrefix,
    #[error("check-ins must be non-decreasing in time (index {0})")]
    UnsortedPrefix(usize),
}

/// Time handling shared by tree construction and the model's hour lookup.
#[derive(Clone, Copy, Debug)]
pub struct TimeContext {
    pub slots_per_day: usize,
    /// Offset added to UTC timestamps so "one day" matches local days.
    pub tz_offset_secs: i64,
    /// Optional permutation of the 24 hour values, used by the diagnostic
    /// slot-shuffle evaluation mode. Identity when absent.
    pub hour_permutation: Option<[usize; 24]>,
}

impl TimeContext {
    pub fn new(slots_per_day: usize, tz_offset_secs: i64) -> Result<Self, TreeError> {
        if slots_per_day == 0 || 24 % slots_per_day != 0 {
            return Err(TreeError::BadSlotCount(slots_per_day));
        }
        Ok(Self { slots_per_day, tz_offset_secs, hour_permutation: None })
    }

    pub fn with_hour_permutation(mut self, perm: [usize; 24]) -> Self {
        self.hour_permutation = Some(perm);
        self
    }

    /// Local hour of day in [0, 24), after the optional permutation.
    pub fn hour(&self, ts: i64) -> usize {
        let h = ((ts + self.tz_offset_secs).rem_euclid(86_400) / 3_600) as usize;
        match &self.hour_permutation {
            Some(p) => p[h],
            None => h,
        }
    }

    /// Days since the epoch in local time.
    pub fn day_key(&self, ts: i64) -> i64 {
        (ts + self.tz_offset_secs).div_euclid(86_400)
    }

    /// 0 = Sunday .. 6 = Saturday (1970-01-01 was a Thursday).
    pub fn day_of_week(&self, ts: i64) -> usize {
        ((self.day_key(ts) + 4).rem_euclid(7)) as usize
    }

    /// Index of the period slot containing `ts`: floor(hour / (24/P)).
    pub fn period_index(&self, ts: i64) -> usize {
        self.hour(ts) / (24 / self.slots_per_day)
    }
}

/// Standalone slot computation, mostly for configuration checks and tests.
pub fn period_index(ts: i64, slots_per_day: usize) -> Result<usize, TreeError> {
    Ok(TimeContext::new(slots_per_day, 0)?.period_index(ts))
}

/// Leaf: one check-in, referenced by its index into the source prefix.
pub type LeafRef = usize;

#[derive(Clone, Debug)]
pub struct PeriodNode {
    pub slot: usize,
    /// Indices into the prefix, sorted by timestamp (input order for ties).
    pub leaves: Vec<LeafRef>,
}

#[derive(Clone, Debug)]
pub struct DayNode {
    pub day_key: i64,
    pub day_of_week: usize,
    pub periods: Vec<PeriodNode>,
}

/// Path to the node group containing the chronologically last check-in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TreePath {
    pub day: usize,
    pub period: usize,
    /// Position of the last check-in inside its period's leaf list.
    pub leaf: usize,
}

#[derive(Clone, Debug)]
pub struct MobilityTree {
    pub days: Vec<DayNode>,
    pub slots_per_day: usize,
    pub current: TreePath,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TreeStats {
    pub days: usize,
    pub periods: usize,
    pub leaves: usize,
    pub max_leaves_per_period: usize,
}

/// Group a trajectory prefix by (local day, period slot).
///
/// Day nodes are ordered by day key, periods by slot index, and leaves keep
/// the input order, so an in-order traversal of the leaves reproduces the
/// prefix exactly.
pub fn build_mobility_tree(prefix: &[CheckIn], ctx: &TimeContext) -> Result<MobilityTree, TreeError> {
    if prefix.is_empty() {
        return Err(TreeError::EmptyPrefix);
    }
    for (i, pair) in prefix.windows(2).enumerate() {
        if pair[1].ts < pair[0].ts {
            return Err(TreeError::UnsortedPrefix(i + 1));
        }
    }

    let mut groups: BTreeMap<(i64, usize), Vec<LeafRef>> = BTreeMap::new();
    for (i, c) in prefix.iter().enumerate() {
        groups.entry((ctx.day_key(c.ts), ctx.period_index(c.ts))).or_default().push(i);
    }

    let last = prefix.len() - 1;
    let mut days: Vec<DayNode> = Vec::new();
    let mut current = TreePath { day: 0, period: 0, leaf: 0 };
    for ((day_key, slot), leaves) in groups {
        if days.last().map(|d| d.day_key) != Some(day_key) {
            days.push(DayNode {
                day_key,
                day_of_week: ctx.day_of_week(prefix[*leaves.first().expect("non-empty group")].ts),
                periods: Vec::new(),
            });
        }
        let day_index = days.len() - 1;
        let day = days.last_mut().expect("day just ensured");
        if let Some(pos) = leaves.iter().position(|&l| l == last) {
            current = TreePath { day: day_index, period: day.periods.len(), leaf: pos };
        }
        day.periods.push(PeriodNode { slot, leaves });
    }

    Ok(MobilityTree { days, slots_per_day: ctx.slots_per_day, current })
}

pub fn tree_stats(tree: &MobilityTree) -> TreeStats {
    let mut stats = TreeStats { days: tree.days.len(), periods: 0, leaves: 0, max_leaves_per_period: 0 };
    for day in &tree.days {
        stats.periods += day.periods.len();
        for period in &day.periods {
            stats.leaves += period.leaves.len();
            stats.max_leaves_per_period = stats.max_leaves_per_period.max(period.leaves.len());
        }
    }
    stats
}

/// Leaf indices in (day, period, time) traversal order.
pub fn leaves_in_order(tree: &MobilityTree) -> Vec<LeafRef> {
    tree.days
        .iter()
        .flat_map(|d| d.periods.iter().flat_map(|p| p.leaves.iter().copied()))
        .collect()
}

/// Largest leaf group produced by any full trajectory in `trajectories`
/// under `P` slots; used as the default Tree-LSTM leaf fan-out.
pub fn max_leaves_per_period(
    trajectories: &[crate::types::Trajectory],
    ctx: &TimeContext,
) -> usize {
    let mut max = 0;
    for t in trajectories {
        let mut counts: BTreeMap<(i64, usize), usize> = BTreeMap::new();
        for c in &t.checkins {
            *counts.entry((ctx.day_key(c.ts), ctx.period_index(c.ts))).or_default() += 1;
        }
        for (_, n) in counts {
            max = max.max(n);
        }
    }
    max
}

/// Indented text rendering for the debug CLI and fixtures.
pub fn render(tree: &MobilityTree, prefix: &[CheckIn], ctx: &TimeContext) -> String {
    use chrono::{TimeZone, Utc};
    use std::fmt::Write;

    let stats = tree_stats(tree);
    let span_hours = 24 / tree.slots_per_day;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "mobility tree: {} day(s), {} period(s), {} leaf(s), P={}",
        stats.days, stats.periods, stats.leaves, tree.slots_per_day
    );
    for (di, day) in tree.days.iter().enumerate() {
        let date = Utc
            .timestamp_opt(day.day_key * 86_400, 0)
            .single()
            .map(|d| d.format("%Y-%m-%d").to_string())
            .unwrap_or_else(|| format!("day_key={}", day.day_key));
        let marker = if di == tree.current.day { " <- current" } else { "" };
        let _ = writeln!(out, "  day {} (dow={}){}", date, day.day_of_week, marker);
        for (pi, period) in day.periods.iter().enumerate() {
            let marker = if di == tree.current.day && pi == tree.current.period {
                " <- current"
            } else {
                ""
            };
            let _ = writeln!(
                out,
                "    period [{:02}:00,{:02}:00) slot={}{}",
                period.slot * span_hours,
                (period.slot + 1) * span_hours,
                period.slot,
                marker
            );
            for (li, &leaf) in period.leaves.iter().enumerate() {
                let c = &prefix[leaf];
                let marker = if di == tree.current.day
                    && pi == tree.current.period
                    && li == tree.current.leaf
                {
                    " <- last check-in"
                } else {
                    ""
                };
                let when = Utc
                    .timestamp_opt(c.ts + ctx.tz_offset_secs, 0)
                    .single()
                    .map(|d| d.format("%Y-%m-%d %H:%M:%S").to_string())
                    .unwrap_or_else(|| c.ts.to_string());
                let _ = writeln!(
                    out,
                    "      leaf #{leaf} poi={} cat={} geo={} t={when}{}",
                    c.poi, c.category, c.geo_cluster, marker
                );
            }
        }
    }
    out
}
