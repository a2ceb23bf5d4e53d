//! Exported MPS files read back by HiGHS' own parser.

use std::ffi::CString;

use saev_core::fixtures::oracle_scale;
use saev_core::milp::assemble;
use saev_core::solver::{export_standard_form, solve, SolveOptions, SolveStatus};

/// Reads and solves an MPS file with the HiGHS C API; `None` if HiGHS rejects it.
fn highs_solve_file(path: &std::path::Path) -> Option<(i32, f64)> {
    let file = CString::new(path.to_str().unwrap()).unwrap();
    let output = CString::new("output_flag").unwrap();
    unsafe {
        let h = highs_sys::Highs_create();
        highs_sys::Highs_setBoolOptionValue(h, output.as_ptr(), 0);
        let read = highs_sys::Highs_readModel(h, file.as_ptr());
        let result = if read == highs_sys::kHighsStatusError {
            None
        } else {
            highs_sys::Highs_run(h);
            Some((highs_sys::Highs_getModelStatus(h), highs_sys::Highs_getObjectiveValue(h)))
        };
        highs_sys::Highs_destroy(h);
        result
    }
}

#[test]
fn highs_parses_exported_instances() {
    let dir = tempfile::tempdir().unwrap();
    let mut optimal = 0;
    for seed in 0..15 {
        let instance = assemble(oracle_scale(seed)).unwrap();
        let path = dir.path().join(format!("seed{seed}.mps"));
        export_standard_form(&instance, &path).unwrap();
        let (status, objective) = highs_solve_file(&path).unwrap_or_else(|| panic!("HiGHS rejected seed {seed}"));
        let ours = solve(&instance, &SolveOptions { rel_gap: 1e-9, ..Default::default() }).unwrap();
        if ours.status == SolveStatus::Optimal {
            assert_eq!(status, highs_sys::MODEL_STATUS_OPTIMAL, "seed {seed}");
            assert!((objective - ours.objective).abs() <= 1e-6 * ours.objective.abs().max(1.0), "seed {seed}");
            optimal += 1;
        } else {
            assert!(
                matches!(status, highs_sys::MODEL_STATUS_INFEASIBLE | highs_sys::MODEL_STATUS_UNBOUNDED_OR_INFEASIBLE),
                "seed {seed}: status {status}"
            );
        }
    }
    assert!(optimal > 0);
}
