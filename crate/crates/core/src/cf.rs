//! Closed-form single-channel correlation filters in the Fourier domain.
//!
//! A filter is estimated as `w^ = (z^ . y^) / (z^ . conj(z^) + lambda)` and
//! applied as `r = F^-1(w^ . conj(z'^))`. With these conventions the
//! response is the circular cross-correlation `r(n) = sum_m w(n + m) z'(m)`,
//! so content that moves by `+d` in the test map moves the response peak by
//! `-d`. The tracker decodes displacement accordingly.

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numerics::{fft2, gaussian_at, ifft2, Plane, SpectrumPlane};

/// One frequency-domain filter.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterChannel {
    pub spectrum: SpectrumPlane,
}

impl FilterChannel {
    pub fn size(&self) -> (usize, usize) {
        (self.spectrum.width(), self.spectrum.height())
    }

    /// The filter in the spatial domain.
    pub fn spatial(&self) -> Result<Plane> {
        ifft2(&self.spectrum)
    }
}

/// Running-average filters for `N_c` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    pub channels: Vec<FilterChannel>,
    pub label: Plane,
    label_spectrum: SpectrumPlane,
    pub lambda: f64,
    pub gamma: f64,
}

impl FilterBank {
    /// First-frame bank: the running averages start at the fresh filters.
    pub fn initial(channels: Vec<FilterChannel>, label: Plane, lambda: f64, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::config(format!("interpolation factor {gamma} outside (0, 1]")));
        }
        if !(lambda >= 0.0) {
            return Err(Error::config("regularizer must be nonnegative"));
        }
        if channels.is_empty() {
            return Err(Error::shape("filter bank needs at least one channel"));
        }
        let size = (label.width(), label.height());
        if channels.iter().any(|c| c.size() != size) {
            return Err(Error::shape("filters and label differ in size"));
        }
        let label_spectrum = fft2(&label);
        Ok(Self { channels, label, label_spectrum, lambda, gamma })
    }

    /// First-frame bank estimated from one plane per channel.
    pub fn train(planes: &[Plane], label: Plane, lambda: f64, gamma: f64) -> Result<Self> {
        if planes.iter().any(|z| !z.same_shape(&label)) {
            return Err(Error::shape("feature channel and label differ in size"));
        }
        let yf = fft2(&label);
        let channels =
            planes.iter().map(|z| estimate_from_spectra(&fft2(z), &yf, lambda)).collect::<Result<Vec<_>>>()?;
        Self::initial(channels, label, lambda, gamma)
    }

    /// Fresh filters for every channel, using this bank's label and regularizer.
    pub fn estimate_all(&self, planes: &[Plane]) -> Result<Vec<FilterChannel>> {
        planes.iter().map(|z| self.estimate(z)).collect()
    }

    pub fn label_spectrum(&self) -> &SpectrumPlane {
        &self.label_spectrum
    }

    /// Estimates a filter for `z` with this bank's label and regularizer.
    pub fn estimate(&self, z: &Plane) -> Result<FilterChannel> {
        if !z.same_shape(&self.label) {
            return Err(Error::shape("feature channel and label differ in size"));
        }
        estimate_from_spectra(&fft2(z), &self.label_spectrum, self.lambda)
    }
}

fn estimate_from_spectra(zf: &SpectrumPlane, yf: &SpectrumPlane, lambda: f64) -> Result<FilterChannel> {
    let w = zf.width();
    let mut data = Vec::with_capacity(zf.data().len());
    for (i, (z, y)) in zf.data().iter().zip(yf.data()).enumerate() {
        let denom = z.norm_sqr() + lambda;
        if denom == 0.0 {
            return Err(Error::SingularBin { x: i % w, y: i / w });
        }
        data.push(z * y / denom);
    }
    Ok(FilterChannel { spectrum: SpectrumPlane::new(zf.width(), zf.height(), data)? })
}

/// `w^ = (z^ . y^) / (|z^|^2 + lambda)` per frequency bin.
pub fn estimate_filter(z: &Plane, y: &Plane, lambda: f64) -> Result<FilterChannel> {
    if !z.same_shape(y) {
        return Err(Error::shape("feature channel and label differ in size"));
    }
    if !(lambda >= 0.0) {
        return Err(Error::config("regularizer must be nonnegative"));
    }
    estimate_from_spectra(&fft2(z), &fft2(y), lambda)
}

/// A response plane with its maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMap {
    pub plane: Plane,
    pub max_value: f64,
    pub peak: (usize, usize),
}

impl ResponseMap {
    pub fn new(plane: Plane) -> Self {
        let (x, y, v) = plane.argmax();
        Self { plane, max_value: v, peak: (x, y) }
    }
}

/// `r = F^-1(w^ . conj(z'^))`.
pub fn response(f: &FilterChannel, zp: &Plane) -> Result<ResponseMap> {
    if f.size() != (zp.width(), zp.height()) {
        return Err(Error::shape("filter and test map differ in size"));
    }
    let mut prod = fft2(zp);
    for (p, w) in prod.data_mut().iter_mut().zip(f.spectrum.data()) {
        *p = w * p.conj();
    }
    Ok(ResponseMap::new(ifft2(&prod)?))
}

/// `(1 - gamma) * bank + gamma * fresh`, bin by bin.
pub fn update_bank(bank: &FilterBank, fresh: &[FilterChannel]) -> Result<FilterBank> {
    if fresh.len() != bank.channels.len() {
        return Err(Error::shape(format!("bank has {} channels, update has {}", bank.channels.len(), fresh.len())));
    }
    let g = bank.gamma;
    let mut channels = Vec::with_capacity(fresh.len());
    for (old, new) in bank.channels.iter().zip(fresh) {
        if old.size() != new.size() {
            return Err(Error::shape("filter sizes differ"));
        }
        let data = old.spectrum.data().iter().zip(new.spectrum.data()).map(|(a, b)| a * (1.0 - g) + b * g).collect();
        let (w, h) = old.size();
        channels.push(FilterChannel { spectrum: SpectrumPlane::new(w, h, data)? });
    }
    Ok(FilterBank { channels, ..bank.clone() })
}

/// `exp(-lambda_s * ||R - R_o||^2)` with `R_o` a unit Gaussian of std `sigma`
/// centered at the integer peak of `R`.
pub fn validation_score(r: &ResponseMap, sigma: f64, lambda_s: f64) -> f64 {
    (-lambda_s * ideal_distance(r, sigma)).exp()
}

/// `||R - R_o||^2` from [`validation_score`].
pub fn ideal_distance(r: &ResponseMap, sigma: f64) -> f64 {
    let (w, h) = (r.plane.width(), r.plane.height());
    let ideal = gaussian_at(w, h, r.peak.0 as f64, r.peak.1 as f64, sigma);
    r.plane.data().iter().zip(ideal.data()).map(|(a, b)| (a - b).powi(2)).sum()
}

/// `R = sum_k s_k R_k`, unnormalized.
pub fn integrate(responses: &[ResponseMap], scores: &[f64]) -> Result<ResponseMap> {
    let first = responses.first().ok_or_else(|| Error::shape("no responses to integrate"))?;
    if responses.len() != scores.len() {
        return Err(Error::LengthMismatch { left: responses.len(), right: scores.len() });
    }
    let mut acc = Plane::zeros(first.plane.width(), first.plane.height());
    for (r, &s) in responses.iter().zip(scores) {
        if !r.plane.same_shape(&first.plane) {
            return Err(Error::shape("responses differ in size"));
        }
        for (a, v) in acc.data_mut().iter_mut().zip(r.plane.data()) {
            *a += s * v;
        }
    }
    Ok(ResponseMap::new(acc))
}

/// Quadratic-fit offset in [-0.5, 0.5] from three samples around a peak.
pub fn parabolic_offset(left: f64, center: f64, right: f64) -> f64 {
    let curvature = left - 2.0 * center + right;
    if curvature == 0.0 || !curvature.is_finite() {
        return 0.0;
    }
    (0.5 * (left - right) / curvature).clamp(-0.5, 0.5)
}

/// Peak position refined by separable parabolic fits (circular neighbors).
pub fn subpixel_peak(r: &ResponseMap) -> (f64, f64) {
    let (w, h) = (r.plane.width(), r.plane.height());
    let (px, py) = r.peak;
    let c = r.plane.get(px, py);
    let dx = if w >= 3 {
        parabolic_offset(r.plane.get((px + w - 1) % w, py), c, r.plane.get((px + 1) % w, py))
    } else {
        0.0
    };
    let dy = if h >= 3 {
        parabolic_offset(r.plane.get(px, (py + h - 1) % h), c, r.plane.get(px, (py + 1) % h))
    } else {
        0.0
    };
    (px as f64 + dx, py as f64 + dy)
}

/// Multiplies two spectra bin by bin (`a . b`).
pub fn spectrum_product(a: &SpectrumPlane, b: &SpectrumPlane) -> SpectrumPlane {
    let data: Vec<Complex64> = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    SpectrumPlane::new(a.width(), a.height(), data).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gaussian_label;

    fn delta(s: usize) -> Plane {
        let mut p = Plane::zeros(s, s);
        p.set(0, 0, 1.0);
        p
    }

    #[test]
    fn delta_input_reproduces_label() {
        let y = gaussian_label(8, 1.2);
        let w = estimate_filter(&delta(8), &y, 0.0).unwrap().spatial().unwrap();
        for (a, b) in w.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let half = estimate_filter(&delta(8), &y, 1.0).unwrap().spatial().unwrap();
        for (a, b) in half.data().iter().zip(y.data()) {
            assert!((a - b / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_bin_without_regularizer() {
        let y = gaussian_label(4, 1.0);
        let err = estimate_filter(&Plane::zeros(4, 4), &y, 0.0).unwrap_err();
        assert!(matches!(err, Error::SingularBin { .. }));
    }

    #[test]
    fn update_rules() {
        let y = gaussian_label(4, 1.0);
        let zero = FilterChannel { spectrum: SpectrumPlane::zeros(4, 4) };
        let one = FilterChannel { spectrum: SpectrumPlane::new(4, 4, vec![Complex64::new(1.0, 0.0); 16]).unwrap() };
        let bank = FilterBank::initial(vec![zero.clone()], y.clone(), 1.0, 0.025).unwrap();
        let upd = update_bank(&bank, &[one.clone()]).unwrap();
        assert!((upd.channels[0].spectrum.get(0, 0).re - 0.025).abs() < 1e-15);
        assert_eq!(update_bank(&bank, &bank.channels).unwrap(), bank);
        let full = FilterBank { gamma: 1.0, ..bank.clone() };
        assert_eq!(update_bank(&full, &[one.clone()]).unwrap().channels[0], one);
        assert!(update_bank(&bank, &[one.clone(), one]).is_err());
        assert!(FilterBank::initial(vec![zero], y, 1.0, 0.0).is_err());
    }

    #[test]
    fn validation_score_limits() {
        let g = gaussian_at(9, 9, 3.0, 5.0, 1.3);
        let r = ResponseMap::new(g.clone());
        assert_eq!(r.peak, (3, 5));
        assert!((validation_score(&r, 1.3, 50.0) - 1.0).abs() < 1e-15);
        // A single-pixel bump of height sqrt(ln 2 / lambda) away from the peak.
        let lambda_s = 50.0;
        let mut p = g;
        let bump = (2f64.ln() / lambda_s).sqrt();
        p.set(8, 0, p.get(8, 0) + bump);
        let s = validation_score(&ResponseMap::new(p), 1.3, lambda_s);
        assert!((s - 0.5).abs() < 1e-12);
    }

    #[test]
    fn integration_rules() {
        let a = ResponseMap::new(gaussian_at(6, 6, 2.0, 3.0, 1.0));
        let one = integrate(&[a.clone()], &[1.0]).unwrap();
        assert_eq!(one.plane, a.plane);
        let two = integrate(&[a.clone(), a.clone()], &[0.5, 0.5]).unwrap();
        for (x, y) in two.plane.data().iter().zip(a.plane.data()) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!(integrate(&[a.clone()], &[1.0, 2.0]).is_err());
        assert!(integrate(&[], &[]).is_err());
    }

    #[test]
    fn subpixel_rules() {
        let mut p = Plane::zeros(5, 5);
        p.set(2, 2, 1.0);
        p.set(1, 2, 0.5);
        p.set(3, 2, 0.5);
        assert_eq!(subpixel_peak(&ResponseMap::new(p)), (2.0, 2.0));
        // Parabola with vertex at x = 2.3 along the row.
        let f = |x: f64| 1.0 - (x - 2.3).powi(2);
        let q = Plane::from_fn(5, 5, |x, y| if y == 1 { f(x as f64) } else { -10.0 });
        let (sx, sy) = subpixel_peak(&ResponseMap::new(q));
        assert!((sx - 2.3).abs() < 1e-6);
        assert!((sy - 1.0).abs() < 0.5 + 1e-12);
        let flat = ResponseMap::new(Plane::from_fn(4, 4, |_, _| 0.7));
        assert_eq!(subpixel_peak(&flat), (0.0, 0.0));
        assert_eq!(parabolic_offset(0.0, 1.0, 1.0), 0.5);
        assert_eq!(parabolic_offset(1.0, 1.0, 0.0), -0.5);
    }
}
