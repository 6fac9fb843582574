//! Text loaders and writers: edge lists, signals, labels, masks and the
//! versioned IBG factor file.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{IbgError, Result};
use crate::graph::{normalize_signal, DirectedGraphSignal, Masks};
use crate::ibg::IbgFactors;

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> IbgError {
    IbgError::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn content_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = File::open(path)?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let trimmed = line.split('#').next().unwrap_or("").trim().to_string();
        if !trimmed.is_empty() {
            out.push((idx + 1, trimmed));
        }
    }
    Ok(out)
}

/// Load a "src dst" edge list. N defaults to 1 + max node id; `nodes`
/// overrides it (required for empty files).
pub fn load_edge_list(path: &Path, nodes: Option<usize>) -> Result<DirectedGraphSignal> {
    let mut edges = Vec::new();
    let mut max_id = 0u32;
    for (lineno, line) in content_lines(path)? {
        let mut it = line.split_whitespace();
        let src = it
            .next()
            .ok_or_else(|| parse_err(path, lineno, "missing src"))?;
        let dst = it
            .next()
            .ok_or_else(|| parse_err(path, lineno, "missing dst"))?;
        if it.next().is_some() {
            return Err(parse_err(path, lineno, "expected exactly two fields"));
        }
        let parse = |tok: &str| -> Result<u32> {
            if tok.starts_with('-') {
                return Err(IbgError::Validation(format!(
                    "negative node id '{tok}' at {}:{lineno}",
                    path.display()
                )));
            }
            tok.parse::<u32>()
                .map_err(|e| parse_err(path, lineno, format!("bad node id '{tok}': {e}")))
        };
        let (s, d) = (parse(src)?, parse(dst)?);
        max_id = max_id.max(s).max(d);
        edges.push((s, d));
    }
    let n = match nodes {
        Some(n) => n,
        None if edges.is_empty() => {
            return Err(IbgError::Validation(format!(
                "empty edge list {} needs an explicit node count",
                path.display()
            )))
        }
        None => max_id as usize + 1,
    };
    DirectedGraphSignal::from_edges(n, edges)
}

fn load_matrix(path: &Path, rows: usize) -> Result<Array2<f64>> {
    let lines = content_lines(path)?;
    if lines.len() != rows {
        return Err(IbgError::Shape(format!(
            "{} has {} rows, expected {rows}",
            path.display(),
            lines.len()
        )));
    }
    let mut data: Vec<f64> = Vec::new();
    let mut cols = None;
    for (lineno, line) in &lines {
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|e| parse_err(path, *lineno, format!("bad float '{t}': {e}")))
            })
            .collect::<Result<_>>()?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(IbgError::Validation(format!(
                "non-finite value at {}:{lineno}",
                path.display()
            )));
        }
        match cols {
            None => cols = Some(row.len()),
            Some(c) if c != row.len() => {
                return Err(parse_err(path, *lineno, "ragged row width"))
            }
            _ => {}
        }
        data.extend(row);
    }
    let cols = cols.unwrap_or(0);
    Array2::from_shape_vec((rows, cols), data)
        .map_err(|e| IbgError::Shape(format!("{}: {e}", path.display())))
}

/// Load an N x D signal and rescale each column to [-1,1].
pub fn load_signal(path: &Path, n: usize) -> Result<Array2<f64>> {
    let mut x = load_matrix(path, n)?;
    normalize_signal(&mut x);
    Ok(x)
}

/// One integer class label per line.
pub fn load_labels(path: &Path, n: usize) -> Result<Vec<usize>> {
    let lines = content_lines(path)?;
    if lines.len() != n {
        return Err(IbgError::Shape(format!(
            "{} has {} labels, expected {n}",
            path.display(),
            lines.len()
        )));
    }
    lines
        .iter()
        .map(|(lineno, line)| {
            line.parse::<usize>()
                .map_err(|e| parse_err(path, *lineno, format!("bad label '{line}': {e}")))
        })
        .collect()
}

/// One of {train, val, test, none} per line.
pub fn load_masks(path: &Path, n: usize) -> Result<Masks> {
    let lines = content_lines(path)?;
    if lines.len() != n {
        return Err(IbgError::Shape(format!(
            "{} has {} mask entries, expected {n}",
            path.display(),
            lines.len()
        )));
    }
    let mut masks = Masks {
        train: vec![false; n],
        val: vec![false; n],
        test: vec![false; n],
    };
    for (i, (lineno, line)) in lines.iter().enumerate() {
        match line.as_str() {
            "train" => masks.train[i] = true,
            "val" => masks.val[i] = true,
            "test" => masks.test[i] = true,
            "none" => {}
            other => {
                return Err(parse_err(
                    path,
                    *lineno,
                    format!("unknown mask '{other}' (want train/val/test/none)"),
                ))
            }
        }
    }
    masks.validate(n)?;
    Ok(masks)
}

pub fn write_row<W: Write>(w: &mut W, row: impl Iterator<Item = f64>) -> std::io::Result<()> {
    let mut first = true;
    for v in row {
        if !first {
            write!(w, " ")?;
        }
        write!(w, "{v:.16e}")?;
        first = false;
    }
    writeln!(w)
}

/// Persist factors in the versioned text format; lossless for f64.
pub fn save_ibg(
    factors: &IbgFactors,
    gamma: f64,
    alpha: f64,
    beta: f64,
    path: &Path,
) -> Result<()> {
    factors.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "IBG v1")?;
    writeln!(w, "N {} K {} D {}", factors.n(), factors.k(), factors.d())?;
    writeln!(w, "gamma {gamma:.16e} alpha {alpha:.16e} beta {beta:.16e}")?;
    writeln!(w, "U'")?;
    for row in factors.ulogit.rows() {
        write_row(&mut w, row.iter().copied())?;
    }
    writeln!(w, "V'")?;
    for row in factors.vlogit.rows() {
        write_row(&mut w, row.iter().copied())?;
    }
    writeln!(w, "r")?;
    write_row(&mut w, factors.r.iter().copied())?;
    writeln!(w, "F")?;
    for row in factors.f.rows() {
        write_row(&mut w, row.iter().copied())?;
    }
    writeln!(w, "B")?;
    for row in factors.b.rows() {
        write_row(&mut w, row.iter().copied())?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug)]
pub struct LoadedIbg {
    pub factors: IbgFactors,
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
}

pub fn load_ibg(path: &Path) -> Result<LoadedIbg> {
    let file = File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let mut next = |what: &str| -> Result<String> {
        lines
            .next()
            .transpose()?
            .ok_or_else(|| IbgError::Format(format!("truncated file, expected {what}")))
    };

    let header = next("version header")?;
    if header.trim() != "IBG v1" {
        return Err(IbgError::Format(format!(
            "unsupported version header '{}', expected 'IBG v1'",
            header.trim()
        )));
    }

    let dims = next("dimension line")?;
    let toks: Vec<&str> = dims.split_whitespace().collect();
    if toks.len() != 6 || toks[0] != "N" || toks[2] != "K" || toks[4] != "D" {
        return Err(IbgError::Format(format!("bad dimension line '{dims}'")));
    }
    let parse_usize = |t: &str| {
        t.parse::<usize>()
            .map_err(|e| IbgError::Format(format!("bad dimension '{t}': {e}")))
    };
    let (n, k, d) = (parse_usize(toks[1])?, parse_usize(toks[3])?, parse_usize(toks[5])?);

    let wline = next("weight line")?;
    let toks: Vec<&str> = wline.split_whitespace().collect();
    if toks.len() != 6 || toks[0] != "gamma" || toks[2] != "alpha" || toks[4] != "beta" {
        return Err(IbgError::Format(format!("bad weight line '{wline}'")));
    }
    let parse_f = |t: &str| {
        t.parse::<f64>()
            .map_err(|e| IbgError::Format(format!("bad weight '{t}': {e}")))
    };
    let (gamma, alpha, beta) = (parse_f(toks[1])?, parse_f(toks[3])?, parse_f(toks[5])?);

    let mut read_block = |name: &str, rows: usize, cols: usize| -> Result<Vec<f64>> {
        let header = next(&format!("block header '{name}'"))?;
        if header.trim() != name {
            return Err(IbgError::Format(format!(
                "expected block '{name}', found '{}'",
                header.trim()
            )));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let line = next(&format!("row of block '{name}'"))?;
            let row: Vec<f64> = line
                .split_whitespace()
                .map(parse_f)
                .collect::<Result<_>>()?;
            if row.len() != cols {
                return Err(IbgError::Format(format!(
                    "block '{name}' row has {} values, expected {cols}",
                    row.len()
                )));
            }
            data.extend(row);
        }
        Ok(data)
    };

    let ulogit = read_block("U'", n, k)?;
    let vlogit = read_block("V'", n, k)?;
    let r = read_block("r", 1, k)?;
    let f = read_block("F", k, d)?;
    let b = read_block("B", k, d)?;

    let shape = |name: &str| IbgError::Format(format!("block '{name}' shape mismatch"));
    let factors = IbgFactors {
        ulogit: Array2::from_shape_vec((n, k), ulogit).map_err(|_| shape("U'"))?,
        vlogit: Array2::from_shape_vec((n, k), vlogit).map_err(|_| shape("V'"))?,
        r: Array1::from(r),
        f: Array2::from_shape_vec((k, d), f).map_err(|_| shape("F"))?,
        b: Array2::from_shape_vec((k, d), b).map_err(|_| shape("B"))?,
    };
    factors.validate()?;
    Ok(LoadedIbg {
        factors,
        gamma,
        alpha,
        beta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    fn temp_file(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn edge_list_basic() {
        let f = temp_file("0 1\n1 2\n");
        let g = load_edge_list(f.path(), None).unwrap();
        assert_eq!(g.num_nodes(), 3);
        assert_eq!(g.num_edges(), 2);
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn edge_list_empty_with_node_count() {
        let f = temp_file("# nothing here\n");
        let g = load_edge_list(f.path(), Some(5)).unwrap();
        assert_eq!(g.num_nodes(), 5);
        assert_eq!(g.num_edges(), 0);
    }

    #[test]
    fn edge_list_dedup() {
        let f = temp_file("0 1\n0 1\n");
        let g = load_edge_list(f.path(), None).unwrap();
        assert_eq!(g.num_edges(), 1);
    }

    #[test]
    fn edge_list_malformed_reports_line() {
        let f = temp_file("0 1\nnot numbers\n");
        match load_edge_list(f.path(), None) {
            Err(IbgError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn edge_list_negative_id_rejected() {
        let f = temp_file("0 -1\n");
        assert!(matches!(
            load_edge_list(f.path(), None),
            Err(IbgError::Validation(_))
        ));
    }

    #[test]
    fn signal_normalized_on_load() {
        let f = temp_file("0\n5\n10\n");
        let x = load_signal(f.path(), 3).unwrap();
        assert_eq!(x.column(0).to_vec(), vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn signal_row_count_mismatch() {
        let f = temp_file("1 2\n3 4\n");
        assert!(matches!(load_signal(f.path(), 3), Err(IbgError::Shape(_))));
    }

    #[test]
    fn signal_non_finite_rejected() {
        let f = temp_file("1\ninf\n");
        assert!(load_signal(f.path(), 2).is_err());
    }

    #[test]
    fn masks_round_trip() {
        let f = temp_file("train\nval\ntest\nnone\n");
        let m = load_masks(f.path(), 4).unwrap();
        assert_eq!(m.train, vec![true, false, false, false]);
        assert_eq!(m.val, vec![false, true, false, false]);
        assert_eq!(m.test, vec![false, false, true, false]);
    }

    #[test]
    fn labels_load() {
        let f = temp_file("0\n1\n1\n");
        assert_eq!(load_labels(f.path(), 3).unwrap(), vec![0, 1, 1]);
    }

    #[test]
    fn factor_round_trip_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut fac = IbgFactors::random(7, 4, 3, &mut rng);
        fac.f = ndarray::Array2::from_shape_fn((4, 3), |_| rng.gen_range(-2.0..2.0));
        fac.b = ndarray::Array2::from_shape_fn((4, 3), |_| rng.gen_range(-2.0..2.0));
        let tmp = tempfile::NamedTempFile::new().unwrap();
        save_ibg(&fac, 1.5, 0.3, 0.7, tmp.path()).unwrap();
        let loaded = load_ibg(tmp.path()).unwrap();
        assert_eq!(loaded.factors, fac);
        assert_eq!(loaded.gamma, 1.5);
        assert_eq!(loaded.alpha, 0.3);
        assert_eq!(loaded.beta, 0.7);
    }

    #[test]
    fn factor_unknown_version_rejected() {
        let f = temp_file("IBG v9\nN 1 K 1 D 0\n");
        match load_ibg(f.path()) {
            Err(IbgError::Format(msg)) => assert!(msg.contains("version")),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn factor_dimension_mismatch_rejected() {
        // Header claims K=2 but rows carry a single value.
        let f = temp_file(
            "IBG v1\nN 1 K 2 D 0\ngamma 1 alpha 1 beta 0\nU'\n0.5\nV'\n0.5\nr\n1 1\nF\nB\n",
        );
        assert!(matches!(load_ibg(f.path()), Err(IbgError::Format(_))));
    }
}
