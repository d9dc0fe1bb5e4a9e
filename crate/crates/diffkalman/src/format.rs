//! Number formatting shared by the human-readable tables.

/// 17 significant digits, enough to round-trip any `f64`.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), num)
}

/// Right-aligned columns separated by two spaces.
pub fn table(header: &[String], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut width: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, cell) in width.iter_mut().zip(r) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let mut s = String::new();
        for (k, cell) in cells.iter().enumerate().take(cols) {
            if k > 0 {
                s.push_str("  ");
            }
            let pad = width[k] - cell.chars().count();
            s.extend(std::iter::repeat_n(' ', pad));
            s.push_str(cell);
        }
        s.push('\n');
        s
    };
    let mut out = line(header);
    for r in rows {
        out.push_str(&line(r));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        for x in [0.1, -1.0 / 3.0, 6.02214076e23, 5e-324, f64::MAX, -0.0] {
            let back: f64 = num(x).parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits());
        }
        assert_eq!(opt(None), "NA");
    }

    #[test]
    fn aligns_columns() {
        let t = table(&["a".into(), "bb".into()], &[vec!["123".into(), "4".into()]]);
        assert_eq!(t, "  a  bb\n123   4\n");
    }
}
