//! sRGB ↔ CIE-Lab (D65) and the linear rescale of Lab into the unit cube.

const WHITE: [f64; 3] = [0.95047, 1.0, 1.08883];

const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

const XYZ_TO_RGB: [[f64; 3]; 3] = [
    [3.2404542, -1.5371385, -0.4985314],
    [-0.9692660, 1.8760108, 0.0415560],
    [0.0556434, -0.2040259, 1.0572252],
];

const DELTA: f64 = 6.0 / 29.0;

/// Lab box mapped onto `[0, 1]³`: `L ∈ [0, 100]`, `a, b ∈ [-128, 127]`.
const LAB_LOW: [f64; 3] = [0.0, -128.0, -128.0];
const LAB_SPAN: [f64; 3] = [100.0, 255.0, 255.0];

fn mul(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|r| m[r][0] * v[0] + m[r][1] * v[1] + m[r][2] * v[2])
}

fn to_linear(c: u8) -> f64 {
    let c = c as f64 / 255.0;
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn from_linear(l: f64) -> u8 {
    let c = if l <= 0.0031308 { 12.92 * l } else { 1.055 * l.powf(1.0 / 2.4) - 0.055 };
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn f(t: f64) -> f64 {
    if t > DELTA.powi(3) {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

fn f_inv(t: f64) -> f64 {
    if t > DELTA {
        t.powi(3)
    } else {
        3.0 * DELTA * DELTA * (t - 4.0 / 29.0)
    }
}

pub fn srgb_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    let xyz = mul(&RGB_TO_XYZ, rgb.map(to_linear));
    let [fx, fy, fz] = [0, 1, 2].map(|i| f(xyz[i] / WHITE[i]));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Inverse of [`srgb_to_lab`]; out-of-gamut colors are clamped per channel.
pub fn lab_to_srgb(lab: [f64; 3]) -> [u8; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let xyz = [f_inv(fx) * WHITE[0], f_inv(fy) * WHITE[1], f_inv(fz) * WHITE[2]];
    mul(&XYZ_TO_RGB, xyz).map(from_linear)
}

pub fn lab_to_unit(lab: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| (lab[i] - LAB_LOW[i]) / LAB_SPAN[i])
}

pub fn unit_to_lab(u: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| LAB_LOW[i] + u[i] * LAB_SPAN[i])
}
