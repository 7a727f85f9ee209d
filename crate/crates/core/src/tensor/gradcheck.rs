//! Central-difference verification of tape gradients.

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of comparing tape gradients with central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub passed: bool,
    pub tolerance: f64,
    /// Largest `|a - n| / max(|a|, |n|, 1e-8)` over checked coordinates.
    pub max_rel_error: f64,
    /// Coordinate of the worst offender with its analytic and numeric values.
    pub worst: Option<(usize, f64, f64)>,
    pub checked: usize,
    /// Coordinates whose ±h probes took different piecewise branches
    /// (relu sign flips, max-pool winner changes). They are reported, not failed.
    pub skipped_kinks: Vec<usize>,
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} max_rel_err={:.3e} (tol {:.1e}) checked={} kinks_skipped={}",
            if self.passed { "pass" } else { "FAIL" },
            self.max_rel_error,
            self.tolerance,
            self.checked,
            self.skipped_kinks.len()
        )?;
        if let Some((i, a, n)) = self.worst {
            write!(f, " worst=#{i} analytic={a:.6e} numeric={n:.6e}")?;
        }
        Ok(())
    }
}

fn evaluate<F>(f: &F, x: Tensor) -> Result<(f64, u64)>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::with_branch_tracking();
    let xv = tape.param(x);
    let out = f(&mut tape, xv)?;
    let value = tape
        .value(out)
        .item()
        .ok_or_else(|| Error::contract("gradient check needs a scalar function"))?;
    Ok((value, tape.branch_signature()))
}

/// Checks every coordinate of `x`. See [`finite_diff_check_coords`].
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let all: Vec<usize> = (0..x.numel()).collect();
    finite_diff_check_coords(f, x, h, tol, &all)
}

/// Compares the tape gradient of scalar `f` at `x` against
/// `(f(x + h e_i) - f(x - h e_i)) / 2h` on the listed coordinates.
pub fn finite_diff_check_coords<F>(f: F, x: &Tensor, h: f64, tol: f64, coords: &[usize]) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::with_branch_tracking();
    let xv = tape.param(x.clone());
    let out = f(&mut tape, xv)?;
    let analytic = tape.backward(out)?.take(xv).expect("param always has a gradient");

    let mut report = GradCheckReport {
        passed: true,
        tolerance: tol,
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        skipped_kinks: Vec::new(),
    };
    for &i in coords {
        if i >= x.numel() {
            return Err(Error::contract(format!("coordinate {i} outside tensor of {} elements", x.numel())));
        }
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let (fp, sig_p) = evaluate(&f, plus)?;
        let (fm, sig_m) = evaluate(&f, minus)?;
        if sig_p != sig_m {
            report.skipped_kinks.push(i);
            continue;
        }
        let numeric = (fp - fm) / (2.0 * h);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        report.checked += 1;
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = rel;
            report.worst = Some((i, a, numeric));
        }
    }
    report.passed = report.max_rel_error <= tol;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sum_of_squares(t: &mut Tape, x: Var) -> Result<Var> {
        let sq = t.mul(x, x)?;
        Ok(t.sum(sq))
    }

    #[test]
    fn quadratic_passes() {
        let x = Tensor::from_vec(vec![0.3, -1.2, 2.5, 0.01, -0.7], [5]).unwrap();
        let r = finite_diff_check(sum_of_squares, &x, 1e-3, 1e-6).unwrap();
        assert!(r.passed, "{r}");
        assert_eq!(r.checked, 5);
    }

    #[test]
    fn wrong_gradient_fails() {
        // scale the value by 2 but claim the gradient of the identity
        struct Liar;
        impl crate::tensor::BackwardOp for Liar {
            fn backward(&self, g: &[f64], _: &[&Tensor], _: &Tensor, needs: &[bool]) -> Vec<Option<Vec<f64>>> {
                vec![needs[0].then(|| g.to_vec())]
            }
        }
        let f = |t: &mut Tape, x: Var| -> Result<Var> {
            let doubled = Tensor::from_parts(t.shape(x).clone(), t.value(x).data().iter().map(|v| 2.0 * v).collect());
            let y = t.record(doubled, &[x], Liar);
            Ok(t.sum(y))
        };
        let x = Tensor::from_vec(vec![1.0, 2.0], [2]).unwrap();
        let r = finite_diff_check(f, &x, 1e-3, 1e-4).unwrap();
        assert!(!r.passed);
        assert!((r.max_rel_error - 0.5).abs() < 1e-9);
    }
}
