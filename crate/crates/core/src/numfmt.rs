//! Six-significant-digit formatting shared by reports and the CLI.

use crate::linalg::C64;

pub const DIGITS: usize = 6;

/// `x` with `digits` significant digits; switches to exponent form outside
/// `[1e−4, 1e6)`.
pub fn sig(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if (-4..6).contains(&exp) {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        // Rounding can carry into a new digit (9.999995 → 10.00000).
        if s.trim_start_matches('-').replace('.', "").trim_start_matches('0').len() > digits && decimals > 0 {
            let d = decimals - 1;
            return format!("{x:.d$}");
        }
        s
    } else {
        format!("{:.*e}", digits - 1, x)
    }
}

pub fn num(x: f64) -> String {
    sig(x, DIGITS)
}

/// `a + bj` / `a - bj`.
pub fn complex(z: C64) -> String {
    let sign = if z.im < 0.0 || (z.im == 0.0 && z.im.is_sign_negative()) { '-' } else { '+' };
    format!("{} {sign} {}j", num(z.re), num(z.im.abs()))
}
