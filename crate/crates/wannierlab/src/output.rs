//! Text formats shared by the library and the command line front end.

use crate::frame1d::BlochFrame;

/// Fixed 17-significant-digit scientific notation.
pub fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

/// Frame file: a `d,D,N,n1[,n2]` header line, then one row per grid node
/// (first axis slowest) holding the `D×N` entries row-major as `re,im` pairs.
pub fn frame_csv(f: &BlochFrame) -> String {
    let mut s = format!("{},{},{},{}\n", f.grids.len(), f.dim, f.rank, f.grids.iter().map(|g| g.len().to_string()).collect::<Vec<_>>().join(","));
    for v in &f.values {
        let mut row = Vec::with_capacity(2 * f.dim * f.rank);
        for i in 0..f.dim {
            for j in 0..f.rank {
                row.push(fmt(v[(i, j)].re));
                row.push(fmt(v[(i, j)].im));
            }
        }
        s += &row.join(",");
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    #[test]
    fn seventeen_digits() {
        assert_eq!(super::fmt(0.1), "1.0000000000000001e-1");
        assert_eq!(super::fmt(-2.0), "-2.0000000000000000e0");
        assert_eq!(super::fmt(0.1).parse::<f64>().unwrap(), 0.1);
    }
}
