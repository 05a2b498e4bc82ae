//! Image-quality metrics, per-image reports and the prompt-feature
//! clustering diagnostic.

mod cluster;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use lumafix_autograd::Tensor;

pub use cluster::{cluster_csv, cluster_report, extract_prompt_features, BlockFeatures, ClusterRow, CLUSTER_HEADER};

use crate::data::{list_pngs, read_png};
use crate::error::{Error, Result};

/// Reported PSNR for identical images.
pub const PSNR_CAP: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Invalid(format!(
            "shape mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if a.is_empty() {
        return Err(Error::Invalid("empty image".into()));
    }
    Ok(())
}

/// `10 log10(peak^2 / MSE)`, capped at [`PSNR_CAP`].
pub fn psnr(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    same_shape(a, b)?;
    if !(peak > 0.0) {
        return Err(Error::Invalid(format!("peak {peak} must be positive")));
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP))
}

/// Normalised 1-D Gaussian taps.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable filtering over the valid region of one `h x w` plane.
fn filter_valid(p: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * p[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over the valid region with an 11-tap Gaussian window
/// (sigma 1.5), `K1 = 0.01`, `K2 = 0.03`; channels averaged.
pub fn ssim(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    same_shape(a, b)?;
    let (c, h, w) = a.dims3()?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Invalid(format!(
            "{h}x{w} image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let k = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let n = h * w;
    let mut total = 0.0;
    for ch in 0..c {
        let pa = &a.data()[ch * n..(ch + 1) * n];
        let pb = &b.data()[ch * n..(ch + 1) * n];
        let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { pa.iter().zip(pb).map(|(&x, &y)| f(x, y)).collect() };
        let mu_a = filter_valid(pa, h, w, &k);
        let mu_b = filter_valid(pb, h, w, &k);
        let e_aa = filter_valid(&prod(&|x, _| x * x), h, w, &k);
        let e_bb = filter_valid(&prod(&|_, y| y * y), h, w, &k);
        let e_ab = filter_valid(&prod(&|x, y| x * y), h, w, &k);
        let mut sum = 0.0;
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += sum / mu_a.len() as f64;
    }
    Ok(total / c as f64)
}

/// Davies-Bouldin index with Euclidean centroid distances and mean
/// distance-to-centroid scatter.
pub fn davies_bouldin<L: Ord + Clone>(features: &[Vec<f64>], labels: &[L]) -> Result<f64> {
    if features.len() != labels.len() {
        return Err(Error::Invalid(format!(
            "{} features for {} labels",
            features.len(),
            labels.len()
        )));
    }
    let dim = features.first().map_or(0, Vec::len);
    if features.iter().any(|f| f.len() != dim) || dim == 0 {
        return Err(Error::Invalid("features must share a positive dimension".into()));
    }
    let mut groups: BTreeMap<L, Vec<&Vec<f64>>> = BTreeMap::new();
    for (f, l) in features.iter().zip(labels) {
        groups.entry(l.clone()).or_default().push(f);
    }
    if groups.len() < 2 {
        return Err(Error::Invalid("need at least two clusters".into()));
    }
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let stats: Vec<(Vec<f64>, f64)> = groups
        .values()
        .map(|members| {
            let mut centroid = vec![0.0; dim];
            for m in members {
                for (c, v) in centroid.iter_mut().zip(m.iter()) {
                    *c += v;
                }
            }
            centroid.iter_mut().for_each(|c| *c /= members.len() as f64);
            let scatter = members.iter().map(|m| dist(m, &centroid)).sum::<f64>() / members.len() as f64;
            (centroid, scatter)
        })
        .collect();
    let k = stats.len();
    let mut total = 0.0;
    for i in 0..k {
        let mut worst = 0.0f64;
        for j in 0..k {
            if i == j {
                continue;
            }
            let d = dist(&stats[i].0, &stats[j].0);
            if d == 0.0 {
                return Err(Error::Invalid(format!("clusters {i} and {j} share a centroid")));
            }
            worst = worst.max((stats[i].1 + stats[j].1) / d);
        }
        total += worst;
    }
    Ok(total / k as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub id: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aggregate {
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    /// Population standard deviations.
    pub std_psnr: f64,
    pub std_ssim: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

fn mean_std(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count() as f64;
    let mean = v.clone().sum::<f64>() / n;
    let var = v.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl MetricReport {
    pub fn push(&mut self, id: impl Into<String>, restored: &Tensor, reference: &Tensor) -> Result<()> {
        self.rows.push(MetricRow {
            id: id.into(),
            psnr: psnr(restored, reference, 1.0)?,
            ssim: ssim(restored, reference, 1.0)?,
        });
        Ok(())
    }

    pub fn aggregate(&self) -> Result<Aggregate> {
        if self.rows.is_empty() {
            return Err(Error::Invalid("empty metric report".into()));
        }
        let (mean_psnr, std_psnr) = mean_std(self.rows.iter().map(|r| r.psnr));
        let (mean_ssim, std_ssim) = mean_std(self.rows.iter().map(|r| r.ssim));
        Ok(Aggregate {
            mean_psnr,
            mean_ssim,
            std_psnr,
            std_ssim,
        })
    }

    /// `id,psnr,ssim` rows then
    /// `AGGREGATE,<mean psnr>,<mean ssim>,<std psnr>,<std ssim>`.
    pub fn to_csv(&self) -> Result<String> {
        let a = self.aggregate()?;
        let mut s = String::from("id,psnr,ssim\n");
        for r in &self.rows {
            writeln!(s, "{},{:.6},{:.6}", r.id, r.psnr, r.ssim).expect("string write");
        }
        writeln!(
            s,
            "AGGREGATE,{:.6},{:.6},{:.6},{:.6}",
            a.mean_psnr, a.mean_ssim, a.std_psnr, a.std_ssim
        )
        .expect("string write");
        Ok(s)
    }

    /// Compares every PNG in `reference_dir` with the same-named file in
    /// `restored_dir`.
    pub fn from_dirs(restored_dir: &Path, reference_dir: &Path) -> Result<Self> {
        let refs = list_pngs(reference_dir)?;
        if refs.is_empty() {
            return Err(Error::Invalid(format!("{}: no PNG images", reference_dir.display())));
        }
        let mut report = Self::default();
        for r in refs {
            let name = r.file_name().expect("listed file");
            let restored = restored_dir.join(name);
            if !restored.exists() {
                return Err(Error::Invalid(format!(
                    "{}: missing restored image",
                    restored.display()
                )));
            }
            let id = r.file_stem().expect("listed file").to_string_lossy().into_owned();
            report.push(id, &read_png(&restored)?, &read_png(&r)?)?;
        }
        Ok(report)
    }
}
