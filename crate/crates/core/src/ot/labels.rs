use crate::tensor::Tensor;

use super::{hungarian, Coupling, OtError, Result};

/// The permutation `tau` maximizing `sum_k mass[k][tau[k]]`: latent class
/// `k` is matched to reference class `tau[k]` (both 0-based).
pub fn assign_labels(mass: &Tensor) -> Result<Vec<usize>> {
    let (n, m) = (mass.rows(), mass.cols());
    if n != m {
        return Err(OtError::NonSquare { rows: n, cols: m });
    }
    for i in 0..n {
        for j in 0..m {
            let v = mass.get(i, j);
            if !(v >= 0.0 && v.is_finite()) {
                return Err(OtError::NegativeMass(i, j));
            }
        }
    }
    hungarian(&mass.map(|v| -v))
}

/// Sums plan mass from source atoms of class `i` to reference atoms whose
/// part belongs to class `j`. Labels, part ids and classes are 0-based.
pub fn class_mass_matrix(
    coupling: &Coupling,
    source_labels: &[usize],
    part_ids: &[usize],
    part_to_class: &[usize],
    k: usize,
) -> Result<Tensor> {
    let (n1, n2) = (coupling.plan.rows(), coupling.plan.cols());
    if source_labels.len() != n1 || part_ids.len() != n2 {
        return Err(OtError::Length(format!(
            "plan is {n1}x{n2}, got {} labels and {} part ids",
            source_labels.len(),
            part_ids.len()
        )));
    }
    let check = |what, labels: &[usize], bound| {
        labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l >= bound)
            .map_or(Ok(()), |(index, &label)| {
                Err(OtError::LabelOutOfRange {
                    what,
                    index,
                    label,
                    k: bound,
                })
            })
    };
    check("source_labels", source_labels, k)?;
    check("part_ids", part_ids, part_to_class.len())?;
    check("part_to_class", part_to_class, k)?;
    let mut out = Tensor::zeros(&[k, k]);
    for (i, &si) in source_labels.iter().enumerate() {
        let row = coupling.plan.row(i);
        for (j, &p) in part_ids.iter().enumerate() {
            let c = part_to_class[p];
            out.set(si, c, out.get(si, c) + row[j]);
        }
    }
    Ok(out)
}
