//! Central-difference verification of the analytic gradients.
//!
//! For sampled coordinates of every dense group and every touched embedding
//! row, the loss is re-evaluated at +-h and the slope compared against what
//! `backward` reported. Forward math is f64 end to end, which keeps the
//! difference quotient's roundoff far below the acceptance threshold.

use rand::RngExt;

use super::{Example, Gradients, Mode, RankingModel};
use crate::error::Result;
use crate::rng::stream;

pub const DEFAULT_STEP: f64 = 1e-4;

/// Relative error floor: coordinates where both slopes are below this are
/// compared against the floor instead, so dead ReLU units and untouched
/// buckets do not divide by zero.
const DENOM_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// Coordinate with the worst error, as "group[index]".
    pub worst: String,
    /// Worst relative error per parameter group, sorted by group name.
    pub group_max: Vec<(String, f64)>,
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOM_FLOOR)
}

fn eval_loss(model: &mut RankingModel, ex: &Example) -> Result<f64> {
    let cache = model.forward(ex, Mode::Eval)?;
    Ok(model.loss_of(&cache, ex))
}

fn sample_indices(rng: &mut impl rand::Rng, n: usize, budget: usize) -> Vec<usize> {
    if n <= budget {
        return (0..n).collect();
    }
    let mut picks: Vec<usize> = (0..budget).map(|_| rng.random_range(0..n)).collect();
    picks.sort_unstable();
    picks.dedup();
    picks
}

pub fn check_gradients(
    model: &mut RankingModel,
    ex: &Example,
    samples_per_group: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    check_gradients_with(model, ex, samples_per_group, seed, |_| {})
}

/// `tamper` edits the analytic gradients before comparison. The no-op
/// closure checks the real backward pass; tests corrupt one entry through it
/// to prove the checker would notice a wrong gradient.
pub fn check_gradients_with(
    model: &mut RankingModel,
    ex: &Example,
    samples_per_group: usize,
    seed: u64,
    tamper: impl FnOnce(&mut Gradients),
) -> Result<GradCheckReport> {
    let cache = model.forward(ex, Mode::Eval)?;
    let (_, mut grads) = model.backward(ex, &cache);
    tamper(&mut grads);
    let h = DEFAULT_STEP;
    let mut report =
        GradCheckReport { checked: 0, max_rel_err: 0.0, worst: String::new(), group_max: vec![] };
    let mut groups: std::collections::BTreeMap<String, f64> = Default::default();
    let mut rng = stream(seed, "gradcheck", &[]);
    let mut record =
        |report: &mut GradCheckReport, group: &str, analytic: f64, numeric: f64, what: String| {
            let e = rel_err(analytic, numeric);
            report.checked += 1;
            let slot = groups.entry(group.to_string()).or_insert(0.0);
            *slot = slot.max(e);
            if e > report.max_rel_err {
                report.max_rel_err = e;
                report.worst = what;
            }
        };

    let named: Vec<(String, Vec<f64>)> =
        grads.dense_named().into_iter().map(|(n, g)| (n, g.to_vec())).collect();
    for (gi, (name, g)) in named.iter().enumerate() {
        for i in sample_indices(&mut rng, g.len(), samples_per_group) {
            model.dense_groups_mut()[gi].1.values[i] += h;
            let up = eval_loss(model, ex)?;
            model.dense_groups_mut()[gi].1.values[i] -= 2.0 * h;
            let down = eval_loss(model, ex)?;
            model.dense_groups_mut()[gi].1.values[i] += h;
            record(&mut report, name, g[i], (up - down) / (2.0 * h), format!("{name}[{i}]"));
        }
    }

    for side in [super::Side::Item, super::Side::User] {
        let touched: Vec<(usize, Vec<f64>)> =
            grads.sparse(side).iter().map(|(&s, g)| (s, g.clone())).collect();
        let label = match side {
            super::Side::Item => "item.table",
            super::Side::User => "user.table",
        };
        for (slot, g) in touched {
            for d in sample_indices(&mut rng, g.len(), samples_per_group) {
                let table = model.table_mut(side).expect("gradient implies table");
                table.row_mut(slot)[d] += h;
                let up = eval_loss(model, ex)?;
                let table = model.table_mut(side).expect("gradient implies table");
                table.row_mut(slot)[d] -= 2.0 * h;
                let down = eval_loss(model, ex)?;
                let table = model.table_mut(side).expect("gradient implies table");
                table.row_mut(slot)[d] += h;
                record(
                    &mut report,
                    label,
                    g[d],
                    (up - down) / (2.0 * h),
                    format!("{label}[{slot}][{d}]"),
                );
            }
        }
    }
    report.group_max = groups.into_iter().collect();
    Ok(report)
}
