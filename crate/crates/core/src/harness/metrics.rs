use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::baseline::{mean_stderr, RuleBasedEstimate};
use crate::trpo::{Checkpoint, Mode, TrainRun};
use crate::{Error, Result};

/// First dialog count at which evaluated success strictly exceeds
/// `reference`, interpolated linearly between the surrounding checkpoints.
/// `None` when no checkpoint exceeds it.
pub fn dialogs_to_beat(checkpoints: &[Checkpoint], reference: f64) -> Option<f64> {
    crossing(checkpoints, |c| c.success_rate - reference)
}

/// Same as [`dialogs_to_beat`] for dialog length, where lower is better.
pub fn dialogs_to_beat_length(checkpoints: &[Checkpoint], reference: f64) -> Option<f64> {
    crossing(checkpoints, |c| reference - c.avg_length)
}

/// First point where `margin` turns positive.
fn crossing(checkpoints: &[Checkpoint], margin: impl Fn(&Checkpoint) -> f64) -> Option<f64> {
    let k = checkpoints.iter().position(|c| margin(c) > 0.0)?;
    let hit = &checkpoints[k];
    if k == 0 {
        return Some(hit.dialogs_seen as f64);
    }
    let prev = &checkpoints[k - 1];
    let (m0, m1) = (margin(prev), margin(hit));
    let frac = -m0 / (m1 - m0);
    let (d0, d1) = (prev.dialogs_seen as f64, hit.dialogs_seen as f64);
    Some(d0 + frac * (d1 - d0))
}

/// The first checkpoint at or after `dialogs`, falling back to the last.
pub fn checkpoint_at(checkpoints: &[Checkpoint], dialogs: usize) -> Option<&Checkpoint> {
    checkpoints
        .iter()
        .find(|c| c.dialogs_seen >= dialogs)
        .or_else(|| checkpoints.last())
}

/// Mean ± standard error over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Self {
        let (mean, stderr) = mean_stderr(xs);
        Self { mean, stderr, n: xs.len() }
    }

    fn fmt(&self, scale: f64, digits: usize) -> String {
        if self.n == 0 {
            return "-".into();
        }
        format!("{:.*} ± {:.*}", digits, self.mean * scale, digits, self.stderr * scale)
    }
}

/// Dialogs-to-beat over seeds. Seeds that never beat the reference enter
/// the statistic at the budget and are counted in `not_reached`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeatStat {
    pub stat: Stat,
    pub not_reached: usize,
}

impl BeatStat {
    fn of(values: &[Option<f64>], budget: usize) -> Self {
        let filled: Vec<f64> = values.iter().map(|v| v.unwrap_or(budget as f64)).collect();
        Self {
            stat: Stat::of(&filled),
            not_reached: values.iter().filter(|v| v.is_none()).count(),
        }
    }

    fn fmt(&self) -> String {
        if self.stat.n == 0 {
            return "-".into();
        }
        if self.not_reached == self.stat.n {
            return "not reached".into();
        }
        let mut s = self.stat.fmt(1.0, 0);
        if self.not_reached > 0 {
            write!(s, " ({}/{} n.r.)", self.not_reached, self.stat.n).unwrap();
        }
        s
    }
}

/// Algorithm label used in reports.
pub fn algorithm_name(mode: Option<Mode>) -> &'static str {
    match mode {
        None => "rule-based",
        Some(Mode::Single) => "trpo",
        Some(Mode::Mtl) => "mtl",
        Some(Mode::Tl) => "tl",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    /// Domain name, or `Average`.
    pub domain: String,
    pub algorithm: String,
    pub success_cut: Stat,
    pub success_beat: Option<BeatStat>,
    pub success_final: Stat,
    pub length_cut: Stat,
    pub length_beat: Option<BeatStat>,
    pub length_final: Stat,
}

/// Success and length tables over domains and algorithms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub budget: usize,
    pub success_cut: usize,
    pub rows: Vec<MetricsRow>,
}

/// Learning curves of one (algorithm, domain) pair, one per seed.
type Curves = BTreeMap<u64, Vec<Checkpoint>>;

impl MetricsTable {
    /// Builds the table from raw run logs and rule-based references, with
    /// domain rows in the order of `domains`.
    pub fn build(
        runs: &[TrainRun],
        references: &BTreeMap<String, RuleBasedEstimate>,
        domains: &[String],
        budget: usize,
        success_cut: usize,
    ) -> Result<Self> {
        let mut curves: BTreeMap<(Mode, String), Curves> = BTreeMap::new();
        for run in runs {
            for d in &run.domains {
                let cps = run.checkpoints(d);
                if cps.is_empty() {
                    return Err(Error::Empty(format!("run {} has no checkpoints for {d}", run.run_id)));
                }
                curves.entry((run.mode, d.clone())).or_default().insert(run.seed, cps);
            }
        }
        let mut rows = Vec::new();
        let mut per_algorithm: BTreeMap<Option<Mode>, Vec<MetricsRow>> = BTreeMap::new();
        let mut per_seed: BTreeMap<Mode, BTreeMap<u64, Vec<[f64; 6]>>> = BTreeMap::new();
        for domain in domains {
            let reference = references
                .get(domain)
                .ok_or_else(|| Error::MissingArtifact(format!("rule-based reference for {domain}")))?;
            let rb = rule_row(domain, reference);
            per_algorithm.entry(None).or_default().push(rb.clone());
            rows.push(rb);
            for mode in Mode::ALL {
                let Some(c) = curves.get(&(mode, domain.clone())) else {
                    continue;
                };
                let mut cols: Vec<[f64; 6]> = Vec::new();
                let mut beats = (Vec::new(), Vec::new());
                for (seed, cps) in c {
                    let at = checkpoint_at(cps, success_cut).expect("non-empty");
                    let last = cps.last().expect("non-empty");
                    let sb = dialogs_to_beat(cps, reference.success);
                    let lb = dialogs_to_beat_length(cps, reference.length);
                    let v = [
                        at.success_rate,
                        sb.unwrap_or(budget as f64),
                        last.success_rate,
                        at.avg_length,
                        lb.unwrap_or(budget as f64),
                        last.avg_length,
                    ];
                    per_seed.entry(mode).or_default().entry(*seed).or_default().push(v);
                    cols.push(v);
                    beats.0.push(sb);
                    beats.1.push(lb);
                }
                let col = |i: usize| Stat::of(&cols.iter().map(|v| v[i]).collect::<Vec<_>>());
                let row = MetricsRow {
                    domain: domain.clone(),
                    algorithm: algorithm_name(Some(mode)).into(),
                    success_cut: col(0),
                    success_beat: Some(BeatStat::of(&beats.0, budget)),
                    success_final: col(2),
                    length_cut: col(3),
                    length_beat: Some(BeatStat::of(&beats.1, budget)),
                    length_final: col(5),
                };
                per_algorithm.entry(Some(mode)).or_default().push(row.clone());
                rows.push(row);
            }
        }
        for (alg, alg_rows) in &per_algorithm {
            rows.push(average_row(*alg, alg_rows, alg.and_then(|m| per_seed.get(&m))));
        }
        Ok(Self {
            budget,
            success_cut,
            rows,
        })
    }

    pub fn row(&self, domain: &str, algorithm: &str) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.domain == domain && r.algorithm == algorithm)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "domain",
            "algorithm",
            "success_cut",
            "success_cut_stderr",
            "dialogs_to_beat",
            "dialogs_to_beat_stderr",
            "dialogs_to_beat_not_reached",
            "success_final",
            "success_final_stderr",
            "length_cut",
            "length_cut_stderr",
            "length_dialogs_to_beat",
            "length_dialogs_to_beat_stderr",
            "length_dialogs_to_beat_not_reached",
            "length_final",
            "length_final_stderr",
            "seeds",
        ])
        .map_err(csv_err)?;
        let f = |x: f64| format!("{x}");
        for r in &self.rows {
            let beat = |b: &Option<BeatStat>| match b {
                Some(b) => [f(b.stat.mean), f(b.stat.stderr), b.not_reached.to_string()],
                None => [String::new(), String::new(), String::new()],
            };
            let [sb, sbe, sbn] = beat(&r.success_beat);
            let [lb, lbe, lbn] = beat(&r.length_beat);
            out.write_record([
                r.domain.clone(),
                r.algorithm.clone(),
                f(r.success_cut.mean),
                f(r.success_cut.stderr),
                sb,
                sbe,
                sbn,
                f(r.success_final.mean),
                f(r.success_final.stderr),
                f(r.length_cut.mean),
                f(r.length_cut.stderr),
                lb,
                lbe,
                lbn,
                f(r.length_final.mean),
                f(r.length_final.stderr),
                r.success_final.n.to_string(),
            ])
            .map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Two aligned plain-text tables: success rates and dialog lengths.
    pub fn to_text(&self) -> String {
        let cut = format!("@ {}", self.success_cut);
        let fin = format!("@ {}", self.budget);
        let success: Vec<[String; 5]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.domain.clone(),
                    r.algorithm.clone(),
                    r.success_cut.fmt(100.0, 1),
                    r.success_beat.as_ref().map_or("-".into(), BeatStat::fmt),
                    r.success_final.fmt(100.0, 1),
                ]
            })
            .collect();
        let length: Vec<[String; 5]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.domain.clone(),
                    r.algorithm.clone(),
                    r.length_cut.fmt(1.0, 2),
                    r.length_beat.as_ref().map_or("-".into(), BeatStat::fmt),
                    r.length_final.fmt(1.0, 2),
                ]
            })
            .collect();
        let mut s = String::new();
        s += "Success rate (%)\n";
        s += &aligned(
            &["domain", "algorithm", &format!("success {cut}"), "dialogs > rule-based", &format!("success {fin}")],
            &success,
        );
        s += "\nAverage dialog length (turns)\n";
        s += &aligned(
            &["domain", "algorithm", &format!("length {cut}"), "dialogs < rule-based", &format!("length {fin}")],
            &length,
        );
        s
    }
}

fn rule_row(domain: &str, e: &RuleBasedEstimate) -> MetricsRow {
    let s = Stat {
        mean: e.success,
        stderr: e.success_stderr,
        n: e.episodes,
    };
    let l = Stat {
        mean: e.length,
        stderr: e.length_stderr,
        n: e.episodes,
    };
    MetricsRow {
        domain: domain.into(),
        algorithm: algorithm_name(None).into(),
        success_cut: s,
        success_beat: None,
        success_final: s,
        length_cut: l,
        length_beat: None,
        length_final: l,
    }
}

/// Means are the unweighted means of the domain rows. For learners the
/// error is the standard error over seeds of each seed's domain average;
/// for the baseline it is the mean of the domain errors.
fn average_row(alg: Option<Mode>, rows: &[MetricsRow], per_seed: Option<&BTreeMap<u64, Vec<[f64; 6]>>>) -> MetricsRow {
    let mean = |f: &dyn Fn(&MetricsRow) -> Stat| -> Stat {
        let n = rows.len() as f64;
        Stat {
            mean: rows.iter().map(|r| f(r).mean).sum::<f64>() / n,
            stderr: rows.iter().map(|r| f(r).stderr).sum::<f64>() / n,
            n: rows.iter().map(|r| f(r).n).min().unwrap_or(0),
        }
    };
    let mut row = MetricsRow {
        domain: "Average".into(),
        algorithm: algorithm_name(alg).into(),
        success_cut: mean(&|r| r.success_cut),
        success_beat: None,
        success_final: mean(&|r| r.success_final),
        length_cut: mean(&|r| r.length_cut),
        length_beat: None,
        length_final: mean(&|r| r.length_final),
    };
    let Some(per_seed) = per_seed else {
        return row;
    };
    let complete: Vec<&Vec<[f64; 6]>> = per_seed.values().filter(|v| v.len() == rows.len()).collect();
    let seed_mean = |i: usize| -> Vec<f64> {
        complete
            .iter()
            .map(|v| v.iter().map(|x| x[i]).sum::<f64>() / v.len() as f64)
            .collect()
    };
    let with_err = |s: Stat, i: usize| -> Stat {
        let per = seed_mean(i);
        Stat {
            mean: s.mean,
            stderr: if per.len() == s.n { Stat::of(&per).stderr } else { s.stderr },
            n: s.n,
        }
    };
    let beat = |f: &dyn Fn(&MetricsRow) -> Option<BeatStat>, i: usize| -> Option<BeatStat> {
        let n = rows.len() as f64;
        let stats: Vec<BeatStat> = rows.iter().filter_map(f).collect();
        if stats.len() != rows.len() {
            return None;
        }
        let s = Stat {
            mean: stats.iter().map(|b| b.stat.mean).sum::<f64>() / n,
            stderr: stats.iter().map(|b| b.stat.stderr).sum::<f64>() / n,
            n: stats.iter().map(|b| b.stat.n).min().unwrap_or(0),
        };
        Some(BeatStat {
            stat: with_err(s, i),
            not_reached: stats.iter().map(|b| b.not_reached).sum(),
        })
    };
    row.success_beat = beat(&|r| r.success_beat, 1);
    row.length_beat = beat(&|r| r.length_beat, 4);
    row.success_cut = with_err(row.success_cut, 0);
    row.success_final = with_err(row.success_final, 2);
    row.length_cut = with_err(row.length_cut, 3);
    row.length_final = with_err(row.length_final, 5);
    row
}

fn aligned<const N: usize>(header: &[&str; N], rows: &[[String; N]]) -> String {
    let mut widths = header.map(|h| h.chars().count());
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut s = String::new();
    let line = |s: &mut String, cells: &[&str]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| {
                let pad = w - c.chars().count();
                if i < 2 {
                    format!("{c}{}", " ".repeat(pad))
                } else {
                    format!("{}{c}", " ".repeat(pad))
                }
            })
            .collect();
        s.push_str(parts.join("  ").trim_end());
        s.push('\n');
    };
    line(&mut s, header);
    let total = widths.iter().sum::<usize>() + 2 * (N - 1);
    s.push_str(&"-".repeat(total));
    s.push('\n');
    for r in rows {
        line(&mut s, &r.iter().map(String::as_str).collect::<Vec<_>>());
    }
    s
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(format!("report: {e}"))
}
