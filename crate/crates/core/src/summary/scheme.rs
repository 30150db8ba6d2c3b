use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::blinking::EmitterModel;
use crate::error::{Error, Result};
use crate::model::DetectorGeometry;

/// Which per-frame statistic vector an estimation scheme forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SchemeSpec {
    /// Pixel means only (standard imaging).
    M,
    /// Per-pixel second auto-cumulants only.
    Ac2,
    /// Means plus auto-moments up to order `K` (`M+AC2…+ACK`).
    MAck(usize),
    /// Means plus every pixel-pair product `n_i n_j`, `i ≤ j`.
    MXc2,
    /// Means plus products summed over pairs sharing a centroid.
    MXc2s,
    /// As [`SchemeSpec::MXc2s`] with SNR-optimal weights inside each centroid.
    MXc2w,
}

impl SchemeSpec {
    /// Canonical form: `M+AC1` is `M`.
    pub fn canonical(self) -> Self {
        match self {
            SchemeSpec::MAck(1) => SchemeSpec::M,
            s => s,
        }
    }

    /// Highest total degree in the counts among the statistics.
    pub fn count_degree(self) -> usize {
        match self.canonical() {
            SchemeSpec::M => 1,
            SchemeSpec::MAck(k) => k,
            _ => 2,
        }
    }

    pub fn validate(self) -> Result<()> {
        if let SchemeSpec::MAck(k) = self {
            if !(1..=4).contains(&k) {
                return Err(Error::UnsupportedScheme(format!(
                    "auto-cumulant order {k} outside 1..=4"
                )));
            }
        }
        Ok(())
    }

    /// Checks the scheme against the blinking model: the Markov model only
    /// supports statistics of degree ≤ 2 in the counts.
    pub fn validate_for(self, model: &EmitterModel) -> Result<()> {
        self.validate()?;
        if model.is_markov() && self.count_degree() > 2 {
            return Err(Error::UnsupportedScheme(format!(
                "{self} needs count moments above degree 2, unavailable for the markov model"
            )));
        }
        Ok(())
    }

    pub fn all_standard() -> [SchemeSpec; 6] {
        [
            SchemeSpec::M,
            SchemeSpec::Ac2,
            SchemeSpec::MAck(2),
            SchemeSpec::MXc2s,
            SchemeSpec::MXc2w,
            SchemeSpec::MXc2,
        ]
    }
}

impl fmt::Display for SchemeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.canonical() {
            SchemeSpec::M => write!(f, "M"),
            SchemeSpec::Ac2 => write!(f, "AC2"),
            SchemeSpec::MAck(k) => write!(f, "M+AC{k}"),
            SchemeSpec::MXc2 => write!(f, "M+XC2"),
            SchemeSpec::MXc2s => write!(f, "M+XC2s"),
            SchemeSpec::MXc2w => write!(f, "M+XC2w"),
        }
    }
}

impl FromStr for SchemeSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('_', "+");
        let scheme = match norm.as_str() {
            "M" => SchemeSpec::M,
            "AC2" => SchemeSpec::Ac2,
            "M+XC2" => SchemeSpec::MXc2,
            "M+XC2S" => SchemeSpec::MXc2s,
            "M+XC2W" => SchemeSpec::MXc2w,
            other => {
                let k = other
                    .strip_prefix("M+AC")
                    .and_then(|k| k.parse::<usize>().ok())
                    .ok_or_else(|| Error::UnsupportedScheme(format!("unknown scheme `{s}`")))?;
                SchemeSpec::MAck(k).canonical()
            }
        };
        scheme.validate()?;
        Ok(scheme)
    }
}

/// One entry of the per-frame statistic vector. Pixel indices are zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Component {
    /// `n_i`
    Mean(usize),
    /// `n_iᵏ`, `k ≥ 2`
    Power(usize, usize),
    /// `(n_i − ⟨n_i⟩)²`
    CentredSquare(usize),
    /// `n_i n_j`, `i ≤ j`
    Product(usize, usize),
    /// `Σ_{i≤j, i+j=s} w_{ij} n_i n_j`; `s` is the zero-based index sum, so
    /// the centroid sits at pixel position `s/2`.
    Centroid(usize),
}

impl Component {
    /// Image of the component under the pixel reflection `i → M−1−i`.
    pub fn mirrored(self, n_pixels: usize) -> Self {
        let r = |i: usize| n_pixels - 1 - i;
        match self {
            Component::Mean(i) => Component::Mean(r(i)),
            Component::Power(i, k) => Component::Power(r(i), k),
            Component::CentredSquare(i) => Component::CentredSquare(r(i)),
            Component::Product(i, j) => Component::Product(r(j), r(i)),
            Component::Centroid(s) => Component::Centroid(2 * (n_pixels - 1) - s),
        }
    }
}

/// Ordered statistic components of `scheme` over the given pixels.
pub(crate) fn components_for_pixels(scheme: SchemeSpec, pixels: &[usize]) -> Result<Vec<Component>> {
    scheme.validate()?;
    let mut out = Vec::new();
    let push_means = |out: &mut Vec<Component>| out.extend(pixels.iter().map(|&i| Component::Mean(i)));
    match scheme.canonical() {
        SchemeSpec::M => push_means(&mut out),
        SchemeSpec::Ac2 => out.extend(pixels.iter().map(|&i| Component::CentredSquare(i))),
        SchemeSpec::MAck(k) => {
            push_means(&mut out);
            for power in 2..=k {
                out.extend(pixels.iter().map(|&i| Component::Power(i, power)));
            }
        }
        SchemeSpec::MXc2 => {
            push_means(&mut out);
            for (a, &i) in pixels.iter().enumerate() {
                for &j in &pixels[a..] {
                    out.push(Component::Product(i, j));
                }
            }
        }
        SchemeSpec::MXc2s | SchemeSpec::MXc2w => {
            push_means(&mut out);
            let mut sums: Vec<usize> = Vec::new();
            for (a, &i) in pixels.iter().enumerate() {
                for &j in &pixels[a..] {
                    sums.push(i + j);
                }
            }
            sums.sort_unstable();
            sums.dedup();
            out.extend(sums.into_iter().map(Component::Centroid));
        }
    }
    Ok(out)
}

/// Statistic components of `scheme` on the full pixel grid.
pub fn statistic_components(scheme: SchemeSpec, geometry: &DetectorGeometry) -> Result<Vec<Component>> {
    let pixels: Vec<usize> = (0..geometry.n_pixels).collect();
    components_for_pixels(scheme, &pixels)
}
