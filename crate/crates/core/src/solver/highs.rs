//! HiGHS backend.

use highs::{ColProblem, HighsModelStatus, Sense as HSense};

use super::{Solution, SolveError, SolveOptions, SolveStatus};
use crate::milp::{MilpInstance, Sense, VarKind};

pub(super) fn solve(instance: &MilpInstance, opts: &SolveOptions) -> Result<Solution, SolveError> {
    let mut pb = ColProblem::new();
    let rows: Vec<_> = instance
        .rows
        .iter()
        .map(|r| match r.sense {
            Sense::Le => pb.add_row(..=r.rhs),
            Sense::Ge => pb.add_row(r.rhs..),
            Sense::Eq => pb.add_row(r.rhs..=r.rhs),
        })
        .collect();
    let mut by_col: Vec<Vec<(highs::Row, f64)>> = vec![Vec::new(); instance.num_cols()];
    for (ri, r) in instance.rows.iter().enumerate() {
        for &(c, a) in &r.terms {
            by_col[c].push((rows[ri], a));
        }
    }
    for (c, factors) in instance.columns.iter().zip(&by_col) {
        let integer = c.kind == VarKind::Binary;
        pb.add_column_with_integrality(c.cost, c.lower..=c.upper, factors, integer);
    }

    let mut model = pb.try_optimise(HSense::Minimise).map_err(|s| SolveError::Backend(format!("{s:?}")))?;
    model.make_quiet();
    model.set_option("mip_rel_gap", opts.rel_gap);
    model.set_option("mip_abs_gap", 0.0);
    model.set_option("time_limit", opts.time_limit_s);
    model.set_option("random_seed", 0);
    if let Some(t) = opts.threads {
        model.set_option("threads", t as i32);
    }
    let solved = model.try_solve().map_err(|s| SolveError::Backend(format!("{s:?}")))?;
    let mip = instance.num_binaries() > 0;
    let incumbent = |solved: &highs::SolvedModel| {
        let mut values = solved.get_solution().columns().to_vec();
        polish(instance, &mut values);
        let objective = instance.objective_value(&values);
        let bound = if mip {
            solved.double_info_value(c"mip_dual_bound").unwrap_or(f64::NEG_INFINITY)
        } else {
            objective
        };
        (values, objective, bound)
    };

    let status = solved.status();
    let solution = match status {
        HighsModelStatus::Optimal => {
            let (values, objective, bound) = incumbent(&solved);
            let mut s = Solution { status: SolveStatus::Optimal, objective, bound, values };
            if s.relative_gap() > opts.rel_gap * (1.0 + 1e-9) + 1e-12 {
                s.status = SolveStatus::GapFeasible;
            }
            s
        }
        HighsModelStatus::Infeasible => Solution::infeasible(),
        HighsModelStatus::UnboundedOrInfeasible if objective_is_bounded(instance) => Solution::infeasible(),
        HighsModelStatus::Unbounded | HighsModelStatus::UnboundedOrInfeasible => Solution {
            status: SolveStatus::Unbounded,
            objective: f64::NEG_INFINITY,
            bound: f64::NEG_INFINITY,
            values: Vec::new(),
        },
        HighsModelStatus::ReachedTimeLimit
        | HighsModelStatus::ReachedIterationLimit
        | HighsModelStatus::ReachedSolutionLimit
        | HighsModelStatus::ReachedInterrupt
        | HighsModelStatus::ReachedMemoryLimit => {
            let has_incumbent = solved.double_info_value(c"mip_primal_bound").map(f64::is_finite).unwrap_or(false);
            if has_incumbent {
                let (values, objective, bound) = incumbent(&solved);
                Solution { status: SolveStatus::GapFeasible, objective, bound, values }
            } else {
                Solution {
                    status: SolveStatus::TimeLimit,
                    objective: f64::NAN,
                    bound: f64::NAN,
                    values: Vec::new(),
                }
            }
        }
        other => return Err(SolveError::Backend(format!("HiGHS returned {other:?}"))),
    };
    Ok(solution)
}

/// True when no column can drive the objective to −∞ on its own.
fn objective_is_bounded(instance: &MilpInstance) -> bool {
    instance.columns.iter().all(|c| {
        (c.cost >= 0.0 || c.upper.is_finite()) && (c.cost <= 0.0 || c.lower.is_finite())
    })
}

/// Rounds binaries and snaps tiny values so downstream checks see clean data.
fn polish(instance: &MilpInstance, values: &mut [f64]) {
    for (c, v) in instance.columns.iter().zip(values.iter_mut()) {
        if c.kind == VarKind::Binary && (*v - v.round()).abs() <= 1e-6 {
            *v = v.round();
        }
        if v.abs() < 1e-12 {
            *v = 0.0;
        }
    }
}
