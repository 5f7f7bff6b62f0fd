//! FastICA (symmetric decorrelation, tanh contrast) with PCA whitening.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bad_channels::{centered_gram, row_means};
use crate::config::IcaConfig;
use crate::error::{Error, Result};
use crate::model::Recording;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentInfo {
    /// Excess kurtosis of the activation (Gaussian → 0).
    pub kurtosis: f64,
    /// Pearson r between the activation and the mean of the frontal channels.
    pub frontal_corr: f64,
    pub rejected: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IcaModel {
    channels: Vec<String>,
    mean: Array1<f64>,
    /// k × C: sources = unmixing · (x − mean)
    unmixing: Array2<f64>,
    /// C × k
    mixing: Array2<f64>,
    components: Vec<ComponentInfo>,
    iterations: usize,
    converged: bool,
    last_change: f64,
}

impl IcaModel {
    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn n_components(&self) -> usize {
        self.unmixing.nrows()
    }

    pub fn unmixing(&self) -> &Array2<f64> {
        &self.unmixing
    }

    pub fn mixing(&self) -> &Array2<f64> {
        &self.mixing
    }

    pub fn components(&self) -> &[ComponentInfo] {
        &self.components
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn last_change(&self) -> f64 {
        self.last_change
    }

    pub fn n_rejected(&self) -> usize {
        self.components.iter().filter(|c| c.rejected).count()
    }

    /// Component activations for a channels × samples block.
    pub fn sources(&self, data: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut centered = data.to_owned();
        for (mut row, m) in centered.outer_iter_mut().zip(self.mean.iter()) {
            row -= *m;
        }
        self.unmixing.dot(&centered)
    }

    /// Remove the rejected components: x − A_rej · S_rej. The part of the data
    /// outside the retained PCA subspace is left untouched.
    pub fn apply(&self, rec: &Recording) -> Result<Recording> {
        self.check_channels(rec)?;
        let rej: Vec<usize> = (0..self.n_components()).filter(|&i| self.components[i].rejected).collect();
        if rej.is_empty() {
            return Ok(rec.clone());
        }
        let u = self.unmixing.select(Axis(0), &rej);
        let a = self.mixing.select(Axis(1), &rej);
        let mut data = rec.data().to_owned();
        let chunks: Vec<_> = data.axis_chunks_iter_mut(Axis(1), CHUNK).collect();
        chunks.into_par_iter().for_each(|mut chunk| {
            let mut centered = chunk.to_owned();
            for (mut row, m) in centered.outer_iter_mut().zip(self.mean.iter()) {
                row -= *m;
            }
            let s = u.dot(&centered);
            chunk -= &a.dot(&s);
        });
        rec.with_data(data)
    }

    fn check_channels(&self, rec: &Recording) -> Result<()> {
        if rec.channels() != self.channels.as_slice() {
            return Err(Error::invalid("recording channels differ from the ICA fit"));
        }
        Ok(())
    }
}

const CHUNK: usize = 8192;

fn to_na(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn from_na(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Eigenpairs sorted by descending eigenvalue (stable on ties).
fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

/// (W Wᵀ)^{-1/2} W
fn symmetric_decorrelation(w: &DMatrix<f64>) -> DMatrix<f64> {
    let (vals, vecs) = sorted_eigen(w * w.transpose());
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        vals.len(),
        vals.iter().map(|v| 1.0 / v.max(1e-300).sqrt()),
    ));
    &vecs * d * vecs.transpose() * w
}

/// Fit FastICA; fails with [`Error::NotConverged`] when the fixed-point
/// iteration does not settle within `max_iter`.
pub fn fit_ica(rec: &Recording, cfg: &IcaConfig, seed: u64) -> Result<IcaModel> {
    let model = fit_ica_unchecked(rec, cfg, seed)?;
    if !model.converged {
        return Err(Error::NotConverged {
            iterations: model.iterations,
            last_change: model.last_change,
        });
    }
    Ok(model)
}

/// Fit FastICA and return the final iterate even when it did not converge
/// (see [`IcaModel::converged`]).
pub fn fit_ica_unchecked(rec: &Recording, cfg: &IcaConfig, seed: u64) -> Result<IcaModel> {
    let data = rec.data();
    let c = data.nrows();
    if cfg.n_components == 0 {
        return Err(Error::invalid("ICA needs at least one component"));
    }
    if data.ncols() < 2 {
        return Err(Error::invalid("ICA needs at least two samples"));
    }
    let mean = Array1::from(row_means(data));
    let cov = centered_gram(data, mean.as_slice().unwrap()) / data.ncols() as f64;
    let (vals, vecs) = sorted_eigen(to_na(&cov));
    let top = vals.first().copied().unwrap_or(0.0);
    let rank = vals.iter().filter(|&&v| v > top * 1e-10 && v > 0.0).count();
    if rank == 0 {
        return Err(Error::invalid("ICA input has zero variance"));
    }
    let mut k = cfg.n_components.min(c);
    if k > rank {
        log::warn!("ICA: data rank {rank} < {k} requested components; reducing to {rank}");
        k = rank;
    }
    // Whitening K = D^{-1/2} Eᵀ (k × C); its pseudo-inverse is E D^{1/2}.
    let whitening = Array2::from_shape_fn((k, c), |(i, j)| vecs[(j, i)] / vals[i].sqrt());
    let dewhitening = Array2::from_shape_fn((c, k), |(j, i)| vecs[(j, i)] * vals[i].sqrt());

    // Fit on an evenly strided subset of samples.
    let stride = data.ncols().div_ceil(cfg.max_fit_samples.max(1)).max(1);
    let mut sub = data.slice(s![.., ..;stride]).to_owned();
    for (mut row, m) in sub.outer_iter_mut().zip(mean.iter()) {
        row -= *m;
    }
    let z = to_na(&whitening.dot(&sub));
    drop(sub);
    let n = z.ncols() as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w0 = DMatrix::from_fn(k, k, |_, _| StandardNormal.sample(&mut rng));
    let mut w = symmetric_decorrelation(&w0);
    let (mut iterations, mut converged, mut last_change) = (0, false, f64::INFINITY);
    for it in 1..=cfg.max_iter {
        let mut g = &w * &z;
        let mut gprime_mean = vec![0.0; k];
        for i in 0..k {
            let mut acc = 0.0;
            for v in g.row_mut(i).iter_mut() {
                let t = v.tanh();
                *v = t;
                acc += 1.0 - t * t;
            }
            gprime_mean[i] = acc / n;
        }
        let mut w_new = (&g * z.transpose()) / n;
        for i in 0..k {
            for j in 0..k {
                w_new[(i, j)] -= gprime_mean[i] * w[(i, j)];
            }
        }
        let w_new = symmetric_decorrelation(&w_new);
        let agreement = &w_new * w.transpose();
        last_change = (0..k).map(|i| (agreement[(i, i)].abs() - 1.0).abs()).fold(0.0, f64::max);
        w = w_new;
        iterations = it;
        if last_change < cfg.tol {
            converged = true;
            break;
        }
    }
    let w = from_na(&w);
    let unmixing = w.dot(&whitening);
    let mixing = dewhitening.dot(&w.t());
    Ok(IcaModel {
        channels: rec.channels().to_vec(),
        mean,
        unmixing,
        mixing,
        components: vec![
            ComponentInfo {
                kurtosis: 0.0,
                frontal_corr: 0.0,
                rejected: false,
            };
            k
        ],
        iterations,
        converged,
        last_change,
    })
}

/// Flag components whose activation correlates with the frontal-channel mean
/// beyond `frontal_corr_threshold` (in absolute value) or whose excess
/// kurtosis exceeds `kurtosis_threshold`. Statistics are computed over the
/// whole recording in streaming fashion.
pub fn reject_components(
    ica: &IcaModel,
    rec: &Recording,
    frontal_channels: &[String],
    kurtosis_threshold: f64,
    frontal_corr_threshold: f64,
) -> Result<IcaModel> {
    ica.check_channels(rec)?;
    let frontal: Vec<usize> = frontal_channels.iter().filter_map(|f| rec.channel_index(f)).collect();
    if frontal.is_empty() {
        return Err(Error::invalid(format!(
            "none of the frontal channels {frontal_channels:?} are present"
        )));
    }
    let k = ica.n_components();
    let data = rec.data();
    // Per component: Σs, Σs², Σs³, Σs⁴, Σs·f ; plus Σf, Σf².
    let mut sums = vec![[0.0f64; 5]; k];
    let (mut sf, mut sff) = (0.0, 0.0);
    let mut start = 0;
    while start < data.ncols() {
        let end = (start + CHUNK).min(data.ncols());
        let block = data.slice(s![.., start..end]);
        let src = ica.sources(block);
        let f: Vec<f64> = (0..end - start)
            .map(|t| frontal.iter().map(|&c| block[[c, t]]).sum::<f64>() / frontal.len() as f64)
            .collect();
        sf += f.iter().sum::<f64>();
        sff += f.iter().map(|v| v * v).sum::<f64>();
        for (i, acc) in sums.iter_mut().enumerate() {
            for (s, fv) in src.row(i).iter().zip(&f) {
                let s2 = s * s;
                acc[0] += s;
                acc[1] += s2;
                acc[2] += s2 * s;
                acc[3] += s2 * s2;
                acc[4] += s * fv;
            }
        }
        start = end;
    }
    let n = data.ncols() as f64;
    let (mf, vf) = (sf / n, sff / n - (sf / n).powi(2));
    let components = sums
        .iter()
        .map(|acc| {
            let mu = acc[0] / n;
            let (e2, e3, e4) = (acc[1] / n, acc[2] / n, acc[3] / n);
            let m2 = e2 - mu * mu;
            let m4 = e4 - 4.0 * mu * e3 + 6.0 * mu * mu * e2 - 3.0 * mu.powi(4);
            let kurtosis = if m2 > 0.0 { m4 / (m2 * m2) - 3.0 } else { 0.0 };
            let cov = acc[4] / n - mu * mf;
            let frontal_corr = if m2 > 0.0 && vf > 0.0 { cov / (m2 * vf).sqrt() } else { 0.0 };
            ComponentInfo {
                kurtosis,
                frontal_corr,
                rejected: frontal_corr.abs() > frontal_corr_threshold || kurtosis > kurtosis_threshold,
            }
        })
        .collect();
    Ok(IcaModel {
        components,
        ..ica.clone()
    })
}
