//! Small numeric helpers shared across modules.

/// Neumaier-compensated summation. Used for every scalar reduction so that
/// totals do not depend on how the summands were produced.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Sum over a clipped `(2r+1)×(2r+1)` window at every pixel.
///
/// Windows are clipped at the raster border; the companion [`box_count`]
/// gives the number of in-bounds pixels per window.
pub fn box_sum(data: &[f64], width: usize, height: usize, radius: usize) -> Vec<f64> {
    debug_assert_eq!(data.len(), width * height);
    let mut horiz = vec![0.0; data.len()];
    for y in 0..height {
        let row = &data[y * width..(y + 1) * width];
        for x in 0..width {
            let lo = x.saturating_sub(radius);
            let hi = (x + radius).min(width - 1);
            horiz[y * width + x] = row[lo..=hi].iter().sum();
        }
    }
    let mut out = vec![0.0; data.len()];
    for y in 0..height {
        let lo = y.saturating_sub(radius);
        let hi = (y + radius).min(height - 1);
        for x in 0..width {
            let mut acc = 0.0;
            for yy in lo..=hi {
                acc += horiz[yy * width + x];
            }
            out[y * width + x] = acc;
        }
    }
    out
}

/// Number of in-bounds pixels in the clipped window around every pixel.
pub fn box_count(width: usize, height: usize, radius: usize) -> Vec<f64> {
    let mut out = vec![0.0; width * height];
    for y in 0..height {
        let ny = (y + radius).min(height - 1) - y.saturating_sub(radius) + 1;
        for x in 0..width {
            let nx = (x + radius).min(width - 1) - x.saturating_sub(radius) + 1;
            out[y * width + x] = (nx * ny) as f64;
        }
    }
    out
}
