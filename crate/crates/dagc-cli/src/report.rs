//! Run reports: structured, diff-able text with the config echo, per-seed
//! results, and mean±std summaries. Percentages are printed with two
//! decimals throughout. Wall-clock goes to stdout only, never into report
//! files, so identical invocations produce identical bytes.

use dagc::metrics::MetricSet;
use dagc::trainer::IterationRecord;

/// Metric value as a fixed-point percentage with two decimals.
pub fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// "81.26±0.62" when std is given, "81.26" otherwise.
pub fn pct_pm(mean: f64, std: Option<f64>) -> String {
    match std {
        Some(s) => format!("{}\u{b1}{}", pct(mean), pct(s)),
        None => pct(mean),
    }
}

pub struct SeedResult {
    pub seed: u64,
    pub metrics: Option<MetricSet>,
    pub final_total_loss: f64,
    pub selected_count: usize,
}

/// The on-disk run report.
pub struct RunReport {
    pub config: Vec<(String, String)>,
    pub seeds: Vec<SeedResult>,
}

impl RunReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("[config]\n");
        for (key, value) in &self.config {
            out.push_str(&format!("{key}: {value}\n"));
        }
        out.push_str("\n[per-seed]\n");
        let with_metrics = self.seeds.iter().any(|s| s.metrics.is_some());
        if with_metrics {
            out.push_str("seed\tACC\tNMI\tARI\tF1\tfinal_loss\tselected\n");
        } else {
            out.push_str("seed\tfinal_loss\tselected\n");
        }
        for s in &self.seeds {
            match &s.metrics {
                Some(m) => out.push_str(&format!(
                    "{}\t{}\t{}\t{}\t{}\t{:.6}\t{}\n",
                    s.seed,
                    pct(m.acc),
                    pct(m.nmi),
                    pct(m.ari),
                    pct(m.f1),
                    s.final_total_loss,
                    s.selected_count
                )),
                None => out.push_str(&format!(
                    "{}\t{:.6}\t{}\n",
                    s.seed, s.final_total_loss, s.selected_count
                )),
            }
        }
        if with_metrics {
            out.push_str("\n[summary]\n");
            let multi = self.seeds.len() > 1;
            out.push_str(if multi {
                "metric\tmean\tstd\n"
            } else {
                "metric\tmean\n"
            });
            for (name, pick) in [
                ("ACC", &(|m: &MetricSet| m.acc) as &dyn Fn(&MetricSet) -> f64),
                ("NMI", &|m: &MetricSet| m.nmi),
                ("ARI", &|m: &MetricSet| m.ari),
                ("F1", &|m: &MetricSet| m.f1),
            ] {
                let values: Vec<f64> = self
                    .seeds
                    .iter()
                    .filter_map(|s| s.metrics.as_ref().map(pick))
                    .collect();
                let (mean, std) = mean_std(&values);
                if multi {
                    out.push_str(&format!("{name}\t{}\t{}\n", pct(mean), pct(std)));
                } else {
                    out.push_str(&format!("{name}\t{}\n", pct(mean)));
                }
            }
        }
        out
    }

    /// Summary metric means in ACC/NMI/ARI/F1 order, when labels were
    /// supplied.
    pub fn metric_means(&self) -> Option<[f64; 4]> {
        let sets: Vec<&MetricSet> = self.seeds.iter().filter_map(|s| s.metrics.as_ref()).collect();
        if sets.is_empty() {
            return None;
        }
        let n = sets.len() as f64;
        Some([
            sets.iter().map(|m| m.acc).sum::<f64>() / n,
            sets.iter().map(|m| m.nmi).sum::<f64>() / n,
            sets.iter().map(|m| m.ari).sum::<f64>() / n,
            sets.iter().map(|m| m.f1).sum::<f64>() / n,
        ])
    }
}

/// One training-log line: iteration, losses, selected count, metrics when
/// ground truth was supplied. Tab-separated.
pub fn format_log_line(rec: &IterationRecord) -> String {
    let mut line = format!(
        "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}",
        rec.iteration,
        rec.losses.recon,
        rec.losses.soft,
        rec.losses.hard,
        rec.losses.total,
        rec.losses.selected_count
    );
    if let Some(m) = &rec.metrics {
        line.push_str(&format!(
            "\t{}\t{}\t{}\t{}",
            pct(m.acc),
            pct(m.nmi),
            pct(m.ari),
            pct(m.f1)
        ));
    }
    line
}
