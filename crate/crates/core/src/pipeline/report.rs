//! Aggregate tables and plots over trial records.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::trial::{TrialRecord, Verdict};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectSummary {
    pub object: String,
    pub trials: usize,
    pub stable: usize,
    pub unstable: usize,
    pub failed: usize,
    /// Largest D1 over trials with metrics (m).
    pub max_d1: f64,
    pub mean_d1: f64,
    /// Mean D2 over stable trials (m); zero when there are none.
    pub mean_d2_stable: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub objects: Vec<ObjectSummary>,
    pub total: ObjectSummary,
}

fn summarize_group<'a>(name: &str, records: impl Iterator<Item = &'a TrialRecord>) -> ObjectSummary {
    let mut s = ObjectSummary {
        object: name.to_string(),
        ..Default::default()
    };
    let (mut d1_sum, mut d1_n, mut d2_sum) = (0.0, 0usize, 0.0);
    for r in records {
        s.trials += 1;
        match r.verdict {
            Verdict::Stable => s.stable += 1,
            Verdict::Unstable => s.unstable += 1,
            Verdict::SimFailed { .. } => s.failed += 1,
        }
        if let Some(m) = r.metrics {
            s.max_d1 = s.max_d1.max(m.d1);
            d1_sum += m.d1;
            d1_n += 1;
            if r.verdict == Verdict::Stable {
                d2_sum += m.d2;
            }
        }
    }
    if d1_n > 0 {
        s.mean_d1 = d1_sum / d1_n as f64;
    }
    if s.stable > 0 {
        s.mean_d2_stable = d2_sum / s.stable as f64;
    }
    s
}

/// Per-object and overall verdict counts and metric means.
pub fn summarize(records: &[TrialRecord]) -> Summary {
    let mut groups: BTreeMap<&str, Vec<&TrialRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(&r.object).or_default().push(r);
    }
    Summary {
        objects: groups
            .iter()
            .map(|(name, rs)| summarize_group(name, rs.iter().copied()))
            .collect(),
        total: summarize_group("all", records.iter()),
    }
}

pub fn summary_csv(summary: &Summary) -> String {
    let mut s = String::from("object,trials,stable,unstable,failed,max_d1_m,mean_d1_m,mean_d2_stable_m\n");
    for o in summary.objects.iter().chain([&summary.total]) {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{:.6e},{:.6e},{:.6e}",
            o.object, o.trials, o.stable, o.unstable, o.failed, o.max_d1, o.mean_d1, o.mean_d2_stable
        );
    }
    s
}

/// Stacked bars of stable, unstable and failed trials per object.
pub fn summary_svg(summary: &Summary) -> String {
    let (bar, gap, h, m) = (40.0, 20.0, 320.0, 48.0);
    let n = summary.objects.len().max(1) as f64;
    let w = 2.0 * m + n * (bar + gap);
    let y_max = summary.objects.iter().map(|o| o.trials).max().unwrap_or(1).max(1) as f64;
    let scale = (h - 2.0 * m) / y_max;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    let _ = writeln!(s, "<line x1=\"{m}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>", h - m, w - m);
    for (i, o) in summary.objects.iter().enumerate() {
        let x = m + gap / 2.0 + i as f64 * (bar + gap);
        let mut y = h - m;
        for (count, color) in [(o.stable, "seagreen"), (o.unstable, "darkorange"), (o.failed, "firebrick")] {
            let bh = count as f64 * scale;
            y -= bh;
            let _ = writeln!(s, "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{bar}\" height=\"{bh:.1}\" fill=\"{color}\"/>");
        }
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            x + bar / 2.0,
            h - m + 14.0,
            o.object
        );
    }
    s.push_str("</svg>\n");
    s
}
