use super::{Result, Tape, Tensor, TensorError, Var};

/// Denominator floor of the relative error; gradients below it are compared
/// on an absolute scale.
pub const REL_FLOOR: f64 = 1e-8;

/// Outcome of comparing tape gradients against central finite differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// max over coordinates of `|g_ad − g_fd| / max(REL_FLOOR, |g_ad| + |g_fd|)`
    pub max_rel_error: f64,
    /// `(input, flat index)` of the worst coordinate
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    /// coordinates whose ±eps perturbation flipped some relu input sign
    pub skipped_near_kink: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tol
    }
}

fn evaluate<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<(f64, Vec<Vec<bool>>)>
where
    F: for<'t> Fn(&mut Tape<'t, f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::with_kink_log();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let out = f(&mut tape, &vars)?;
    let value = scalar_value(&tape, out)?;
    Ok((value, tape.relu_masks().unwrap_or_default().to_vec()))
}

fn scalar_value(tape: &Tape<'_, f64>, out: Var) -> Result<f64> {
    let v = tape.value(out);
    if v.len() != 1 {
        return Err(TensorError::NonScalarRoot(v.shape().to_vec()));
    }
    Ok(v.item())
}

/// Checks every coordinate of every input of the scalar function `f`.
///
/// Coordinates whose perturbation changes the sign pattern of any relu input
/// are counted in `skipped_near_kink` rather than compared; a derivative is
/// not defined there.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&mut Tape<'t, f64>, &[Var]) -> Result<Var>,
{
    if eps <= 0.0 {
        return Err(TensorError::Contract(format!(
            "grad_check: eps must be positive, got {eps}"
        )));
    }
    let mut work: Vec<Tensor<f64>> = inputs.iter().map(|t| t.clone().requiring_grad()).collect();

    let (analytic, base_masks) = {
        let mut tape = Tape::with_kink_log();
        let vars: Vec<Var> = work.iter().map(|t| tape.leaf(t)).collect();
        let out = f(&mut tape, &vars)?;
        scalar_value(&tape, out)?;
        let masks = tape.relu_masks().unwrap_or_default().to_vec();
        let mut grads = tape.backward(out)?;
        let analytic: Vec<Vec<f64>> = vars
            .iter()
            .zip(&work)
            .map(|(&v, t)| grads.take(v).unwrap_or_else(|| vec![0.0; t.len()]))
            .collect();
        (analytic, masks)
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        skipped_near_kink: 0,
    };
    for i in 0..work.len() {
        for j in 0..work[i].len() {
            let orig = work[i].values()[j];
            work[i].values_mut()[j] = orig + eps;
            let (plus, mask_plus) = evaluate(&f, &work)?;
            work[i].values_mut()[j] = orig - eps;
            let (minus, mask_minus) = evaluate(&f, &work)?;
            work[i].values_mut()[j] = orig;
            if mask_plus != base_masks || mask_minus != base_masks {
                report.skipped_near_kink += 1;
                continue;
            }
            let fd = (plus - minus) / (2.0 * eps);
            let ad = analytic[i][j];
            let rel = (ad - fd).abs() / (ad.abs() + fd.abs()).max(REL_FLOOR);
            report.checked += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((i, j));
            }
        }
    }
    Ok(report)
}
