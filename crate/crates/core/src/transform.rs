//! Sampled transforms, dense operator matrices, and kernel/injectivity
//! diagnostics at a finite set of chart points.

use nalgebra::{DMatrix, SVD};
use serde::{Deserialize, Serialize};

use crate::domain::{dot, DistributionVector, GridDomain, Interval, TestFunction};
use crate::embeddings::{Embedding, EmbeddingDescriptor};
use crate::io;
use crate::parallel::*;
use crate::{Error, Result};

/// Largest dense operator matrix, in entries.
pub const MAX_MATRIX_ENTRIES: usize = 50_000_000;

/// Largest interior column count accepted by the dense SVD of
/// [`kernel_diagnostics`].
pub const MAX_KERNEL_COLUMNS: usize = 2500;

/// Default relative singular-value cut for numeric rank.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Regular samples over `axes`: `counts[a]` points per axis, endpoint
/// excluded on periodic axes, both endpoints included otherwise (a single
/// point sits at the center). C order, last axis fastest.
pub fn sample_grid(axes: &[Interval], periodic: &[bool], counts: &[usize]) -> Result<Vec<Vec<f64>>> {
    if axes.len() != counts.len() || periodic.len() != counts.len() {
        return Err(Error::LengthMismatch {
            expected: axes.len(),
            found: counts.len(),
        });
    }
    if counts.contains(&0) {
        return Err(Error::InvalidArgument("sample counts must be positive".into()));
    }
    let ticks: Vec<Vec<f64>> = axes
        .iter()
        .zip(periodic)
        .zip(counts)
        .map(|((iv, &per), &c)| {
            if per {
                (0..c).map(|i| iv.lo + iv.width() * i as f64 / c as f64).collect()
            } else if c == 1 {
                vec![iv.center()]
            } else {
                (0..c).map(|i| iv.lo + iv.width() * i as f64 / (c - 1) as f64).collect()
            }
        })
        .collect();
    let total: usize = counts.iter().product();
    Ok((0..total)
        .map(|mut flat| {
            let mut y = vec![0.0; counts.len()];
            for a in (0..counts.len()).rev() {
                y[a] = ticks[a][flat % counts[a]];
                flat /= counts[a];
            }
            y
        })
        .collect())
}

/// Column names of a chart for CSV output.
pub fn axis_names(descriptor: Option<&EmbeddingDescriptor>, k: usize) -> Vec<String> {
    match descriptor {
        Some(EmbeddingDescriptor::Line { .. }) => vec!["theta".into(), "s".into()],
        Some(EmbeddingDescriptor::Circle { .. }) => (1..=k).map(|a| format!("c{a}")).collect(),
        Some(EmbeddingDescriptor::Dirac { .. }) => (1..=k).map(|a| format!("x{a}")).collect(),
        None => (1..=k).map(|a| format!("y{a}")).collect(),
    }
}

/// `R f` at a list of chart points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledTransform {
    pub chart_samples: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    /// Per-axis counts when the samples form a regular grid.
    pub shape: Option<Vec<usize>>,
    pub warnings: Vec<String>,
}

impl SampledTransform {
    /// Header of chart coordinates followed by `value`.
    pub fn to_csv(&self, names: &[String]) -> String {
        let mut header: Vec<&str> = names.iter().map(String::as_str).collect();
        header.push("value");
        let rows = self.chart_samples.iter().zip(&self.values).map(|(y, v)| {
            let mut row = y.clone();
            row.push(*v);
            row
        });
        io::table_csv(&header, rows)
    }

    /// 16-bit PGM of a regular 2D sample grid: first axis down, second
    /// across.
    pub fn to_pgm(&self) -> Result<Vec<u8>> {
        match self.shape.as_deref() {
            Some(&[rows, cols]) => Ok(io::pgm16(cols, rows, &self.values)),
            _ => Err(Error::InvalidArgument(
                "PGM export needs a regular 2D sample grid".into(),
            )),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn support_warning(f: &TestFunction) -> Option<String> {
    (!f.support_ok()).then(|| {
        "test function was clipped on the margin by more than 1e-12 of its peak; \
         transform values are those of the clipped function"
            .to_string()
    })
}

/// `values[j] = ⟨σ(y_j), f⟩`, one σ per sample.
pub fn radon_forward<E: Embedding + ?Sized>(
    emb: &E,
    f: &TestFunction,
    chart_samples: &[Vec<f64>],
) -> Result<SampledTransform> {
    if f.len() != emb.domain().len() {
        return Err(Error::LengthMismatch {
            expected: emb.domain().len(),
            found: f.len(),
        });
    }
    let values = chart_samples
        .par_iter()
        .map(|y| Ok(dot(emb.sigma(y)?.weights(), f.values())))
        .collect::<Result<Vec<f64>>>()?;
    Ok(SampledTransform {
        chart_samples: chart_samples.to_vec(),
        values,
        shape: None,
        warnings: support_warning(f).into_iter().collect(),
    })
}

/// [`radon_forward`] on a [`sample_grid`], keeping its shape.
pub fn radon_forward_grid<E: Embedding + ?Sized>(
    emb: &E,
    f: &TestFunction,
    axes: &[Interval],
    counts: &[usize],
) -> Result<SampledTransform> {
    let samples = sample_grid(axes, emb.chart().periodic(), counts)?;
    let mut out = radon_forward(emb, f, &samples)?;
    out.shape = Some(counts.to_vec());
    Ok(out)
}

/// Rows `σ(y_j)` stacked into a dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMatrix {
    pub chart_samples: Vec<Vec<f64>>,
    n_cols: usize,
    data: Vec<f64>,
}

impl OperatorMatrix {
    pub fn n_rows(&self) -> usize {
        self.chart_samples.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.data[j * self.n_cols..(j + 1) * self.n_cols]
    }

    /// `A f`, summed exactly as [`crate::pair`] sums.
    pub fn apply(&self, f: &TestFunction) -> Result<Vec<f64>> {
        self.apply_slice(f.values())
    }

    fn apply_slice(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.n_cols {
            return Err(Error::LengthMismatch {
                expected: self.n_cols,
                found: v.len(),
            });
        }
        Ok((0..self.n_rows()).map(|j| dot(self.row(j), v)).collect())
    }
}

/// Dense matrix of σ at the samples; refuses more than
/// [`MAX_MATRIX_ENTRIES`] entries.
pub fn operator_matrix<E: Embedding + ?Sized>(
    emb: &E,
    chart_samples: &[Vec<f64>],
) -> Result<OperatorMatrix> {
    let n = emb.domain().len();
    let p = chart_samples.len();
    if p == 0 {
        return Err(Error::EmptyMatrix);
    }
    let entries = p.saturating_mul(n);
    if entries > MAX_MATRIX_ENTRIES {
        return Err(Error::MatrixTooLarge {
            entries,
            cap: MAX_MATRIX_ENTRIES,
        });
    }
    let mut data = vec![0.0; entries];
    data.par_chunks_mut(n)
        .zip(chart_samples.par_iter())
        .try_for_each(|(row, y)| -> Result<()> {
            row.copy_from_slice(emb.sigma(y)?.weights());
            Ok(())
        })?;
    Ok(OperatorMatrix {
        chart_samples: chart_samples.to_vec(),
        n_cols: n,
        data,
    })
}

/// Numeric rank and nullspace of an operator matrix on interior
/// coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelReport {
    pub n_rows: usize,
    /// Interior (non-margin) columns analysed.
    pub n_cols: usize,
    pub tol: f64,
    pub rank: usize,
    pub kernel_dim: usize,
    pub singular_values: Vec<f64>,
    /// `|A v| / |v|` for every kernel vector.
    pub residuals: Vec<f64>,
    /// `10 · tol · σ_max`, the bound every residual must meet.
    pub residual_bound: f64,
    /// Kernel vectors over all nodes, zero on the margin.
    #[serde(skip)]
    pub kernel_basis: Vec<DistributionVector>,
}

impl KernelReport {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().fold(0.0, |m, r| m.max(*r))
    }

    /// Kernel basis as CSV, one column per vector.
    pub fn basis_csv(&self) -> String {
        let names: Vec<String> = (0..self.kernel_basis.len()).map(|i| format!("v{i}")).collect();
        let header: Vec<&str> = names.iter().map(String::as_str).collect();
        let len = self.kernel_basis.first().map_or(0, |v| v.len());
        io::table_csv(
            &header,
            (0..len).map(|i| self.kernel_basis.iter().map(|v| v.weights()[i]).collect()),
        )
    }
}

/// Rank (singular values `≥ tol · σ_max`) of `A` restricted to the
/// interior columns, and an orthonormal basis of its nullspace there.
/// Margin coordinates are excluded: they lie in every kernel.
pub fn kernel_diagnostics(a: &OperatorMatrix, domain: &GridDomain, tol: f64) -> Result<KernelReport> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("rank tolerance {tol} must be positive")));
    }
    if a.n_rows() == 0 || a.n_cols() == 0 {
        return Err(Error::EmptyMatrix);
    }
    if a.n_cols() != domain.len() {
        return Err(Error::LengthMismatch {
            expected: domain.len(),
            found: a.n_cols(),
        });
    }
    let cols = domain.interior_indices();
    let m = cols.len();
    if m > MAX_KERNEL_COLUMNS {
        return Err(Error::MatrixTooLarge {
            entries: m,
            cap: MAX_KERNEL_COLUMNS,
        });
    }
    let p = a.n_rows();
    // Zero rows pad a wide matrix to square so the SVD returns the full
    // right singular basis.
    let rows = p.max(m);
    let dense = DMatrix::from_fn(rows, m, |i, j| if i < p { a.row(i)[cols[j]] } else { 0.0 });
    let svd = SVD::new(dense, false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let singular_values: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let smax = singular_values.first().copied().unwrap_or(0.0);
    let cut = tol * smax;
    let rank = if smax > 0.0 {
        singular_values.iter().filter(|&&s| s >= cut).count()
    } else {
        0
    };

    let mut kernel_basis = Vec::new();
    let mut residuals = Vec::new();
    for &i in &order[rank..] {
        let mut full = vec![0.0; a.n_cols()];
        for (j, &c) in cols.iter().enumerate() {
            full[c] = v_t[(i, j)];
        }
        let av = a.apply_slice(&full)?;
        let norm_v = full.iter().map(|x| x * x).sum::<f64>().sqrt();
        residuals.push(av.iter().map(|x| x * x).sum::<f64>().sqrt() / norm_v);
        kernel_basis.push(DistributionVector::from_raw(full));
    }
    Ok(KernelReport {
        n_rows: p,
        n_cols: m,
        tol,
        rank,
        kernel_dim: m - rank,
        singular_values,
        residuals,
        residual_bound: 10.0 * tol * smax,
        kernel_basis,
    })
}

/// One pair of candidate functions compared at the samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairComparison {
    pub first: usize,
    pub second: usize,
    pub max_transform_diff: f64,
    pub max_function_diff: f64,
    pub equal_transforms: bool,
    pub equal_functions: bool,
}

impl PairComparison {
    /// Distinct functions with indistinguishable transforms.
    pub fn is_witness(&self) -> bool {
        self.equal_transforms && !self.equal_functions
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub n_samples: usize,
    pub tol: f64,
    pub pairs: Vec<PairComparison>,
    /// Indices into `pairs`.
    pub witnesses: Vec<usize>,
    pub note: String,
}

/// Compares the sampled transforms of every pair of candidates. Pairs
/// whose transforms agree to `tol` (relative to the larger magnitude,
/// floored at 1) while the functions differ are witnesses that the
/// transform is not injective at this sampling. An empty witness list
/// certifies nothing.
pub fn separates_points_check<E: Embedding + ?Sized>(
    emb: &E,
    chart_samples: &[Vec<f64>],
    candidates: &[TestFunction],
    tol: f64,
) -> Result<SeparationReport> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance {tol} must be positive")));
    }
    let n = emb.domain().len();
    if let Some(bad) = candidates.iter().find(|f| f.len() != n) {
        return Err(Error::LengthMismatch {
            expected: n,
            found: bad.len(),
        });
    }
    // Each σ is built once and paired with every candidate.
    let per_sample: Vec<Vec<f64>> = chart_samples
        .par_iter()
        .map(|y| {
            let s = emb.sigma(y)?;
            Ok(candidates.iter().map(|f| dot(s.weights(), f.values())).collect())
        })
        .collect::<Result<_>>()?;
    let sup = |it: &mut dyn Iterator<Item = f64>| it.fold(0.0_f64, |m, v| m.max(v.abs()));
    let mut pairs = Vec::new();
    for i in 0..candidates.len() {
        for j in i + 1..candidates.len() {
            let ti = sup(&mut per_sample.iter().map(|r| r[i]));
            let tj = sup(&mut per_sample.iter().map(|r| r[j]));
            let dt = sup(&mut per_sample.iter().map(|r| r[i] - r[j]));
            let (fi, fj) = (candidates[i].values(), candidates[j].values());
            let df = sup(&mut fi.iter().zip(fj).map(|(a, b)| a - b));
            let fmax = sup(&mut fi.iter().chain(fj).copied());
            pairs.push(PairComparison {
                first: i,
                second: j,
                max_transform_diff: dt,
                max_function_diff: df,
                equal_transforms: dt <= tol * ti.max(tj).max(1.0),
                equal_functions: df <= tol * fmax.max(1.0),
            });
        }
    }
    let witnesses = (0..pairs.len()).filter(|&p| pairs[p].is_witness()).collect::<Vec<_>>();
    let note = if witnesses.is_empty() {
        format!(
            "no witness of non-injectivity among {} candidates at this sampling ({} chart points); \
             this does not certify injectivity",
            candidates.len(),
            chart_samples.len()
        )
    } else {
        format!(
            "{} pair(s) of distinct candidates share a transform at this sampling ({} chart points)",
            witnesses.len(),
            chart_samples.len()
        )
    };
    Ok(SeparationReport {
        n_samples: chart_samples.len(),
        tol,
        pairs,
        witnesses,
        note,
    })
}
