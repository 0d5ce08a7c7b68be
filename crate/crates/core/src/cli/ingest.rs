//! The columnar grid file: a plain CSV with one row per pixel, `NA` marking
//! missing outcomes, and provenance carried in `#`-comment header lines.
//!
//! Required columns: `row,col,Y0,Y1,D`. Optional: `block`, then any number
//! of covariate columns identified by name. Grid geometry (spacing, origin)
//! rides in the header comments so that export followed by ingest is the
//! identity.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use crate::dml::GridDataset;
use crate::error::{Error, Result};
use crate::lattice::{BlockPartition, Grid};

const MAX_REPORTED_ERRORS: usize = 20;

/// Serialize a dataset, prepending the given provenance pairs as comments.
pub fn export_dataset(data: &GridDataset, header_meta: &[(String, String)]) -> String {
    let mut out = String::new();
    out.push_str("# stdml-dataset v1\n");
    for (k, v) in header_meta {
        let _ = writeln!(out, "# {k}={v}");
    }
    let _ = writeln!(out, "# spacing={}", data.grid.spacing());
    let _ = writeln!(out, "# origin_x={}", data.grid.origin().0);
    let _ = writeln!(out, "# origin_y={}", data.grid.origin().1);

    out.push_str("row,col,Y0,Y1,D");
    if data.blocks.is_some() {
        out.push_str(",block");
    }
    for name in &data.covariate_names {
        let _ = write!(out, ",{name}");
    }
    out.push('\n');

    let fmt_opt = |v: &Option<f64>| match v {
        Some(x) => x.to_string(),
        None => "NA".to_string(),
    };
    for i in 0..data.n_pixels() {
        let (r, c) = data.grid.row_col(i);
        let _ = write!(
            out,
            "{r},{c},{},{},{}",
            fmt_opt(&data.y0[i]),
            fmt_opt(&data.y1[i]),
            data.d[i]
        );
        if let Some(blocks) = &data.blocks {
            let _ = write!(out, ",{}", blocks.label_of(i));
        }
        for j in 0..data.n_covariates() {
            let _ = write!(out, ",{}", data.x[(i, j)]);
        }
        out.push('\n');
    }
    out
}

/// Parse and validate a columnar grid file.
pub fn ingest_str(text: &str) -> Result<GridDataset> {
    let mut meta: BTreeMap<String, String> = BTreeMap::new();
    let mut header: Option<(usize, Vec<String>)> = None;
    let mut rows: Vec<(usize, Vec<String>)> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((k, v)) = comment.trim().split_once('=') {
                meta.insert(k.trim().to_string(), v.trim().to_string());
            }
            continue;
        }
        let fields: Vec<String> = line.split(',').map(|f| f.trim().to_string()).collect();
        if header.is_none() {
            header = Some((line_no, fields));
        } else {
            rows.push((line_no, fields));
        }
    }

    let (header_line, columns) =
        header.ok_or_else(|| Error::Validation(vec!["no header row found".into()]))?;
    let mut errors: Vec<String> = Vec::new();

    let col_index = |name: &str| columns.iter().position(|c| c == name);
    let required = ["row", "col", "Y0", "Y1", "D"];
    for name in required {
        if col_index(name).is_none() {
            errors.push(format!("line {header_line}: missing required column '{name}'"));
        }
    }
    if !errors.is_empty() {
        return Err(Error::Validation(errors));
    }
    let idx_row = col_index("row").unwrap();
    let idx_col = col_index("col").unwrap();
    let idx_y0 = col_index("Y0").unwrap();
    let idx_y1 = col_index("Y1").unwrap();
    let idx_d = col_index("D").unwrap();
    let idx_block = col_index("block");
    let mut fixed: Vec<usize> = vec![idx_row, idx_col, idx_y0, idx_y1, idx_d];
    fixed.extend(idx_block);
    let covariate_cols: Vec<usize> = (0..columns.len()).filter(|j| !fixed.contains(j)).collect();
    let covariate_names: Vec<String> =
        covariate_cols.iter().map(|&j| columns[j].clone()).collect();

    struct Parsed {
        line: usize,
        row: usize,
        col: usize,
        y0: Option<f64>,
        y1: Option<f64>,
        d: u8,
        block: Option<usize>,
        covariates: Vec<f64>,
    }

    let mut parsed: Vec<Parsed> = Vec::with_capacity(rows.len());
    for (line_no, fields) in &rows {
        if errors.len() >= MAX_REPORTED_ERRORS {
            break;
        }
        if fields.len() != columns.len() {
            errors.push(format!(
                "line {line_no}: {} fields, header has {}",
                fields.len(),
                columns.len()
            ));
            continue;
        }
        let parse_usize = |j: usize, what: &str, errors: &mut Vec<String>| -> Option<usize> {
            match fields[j].parse::<usize>() {
                Ok(v) => Some(v),
                Err(_) => {
                    errors.push(format!("line {line_no}: bad {what} '{}'", fields[j]));
                    None
                }
            }
        };
        let parse_outcome = |j: usize, what: &str, errors: &mut Vec<String>| -> Option<Option<f64>> {
            if fields[j] == "NA" {
                return Some(None);
            }
            match fields[j].parse::<f64>() {
                Ok(v) if v.is_finite() => Some(Some(v)),
                _ => {
                    errors.push(format!("line {line_no}: bad {what} '{}'", fields[j]));
                    None
                }
            }
        };
        let row = parse_usize(idx_row, "row", &mut errors);
        let col = parse_usize(idx_col, "col", &mut errors);
        let y0 = parse_outcome(idx_y0, "Y0", &mut errors);
        let y1 = parse_outcome(idx_y1, "Y1", &mut errors);
        let d = match fields[idx_d].parse::<u8>() {
            Ok(v @ (0 | 1)) => Some(v),
            _ => {
                errors.push(format!(
                    "line {line_no}: D must be 0 or 1, got '{}'",
                    fields[idx_d]
                ));
                None
            }
        };
        let block = match idx_block {
            Some(j) => match parse_usize(j, "block", &mut errors) {
                Some(b) => Some(Some(b)),
                None => None,
            },
            None => Some(None),
        };
        let mut covariates = Vec::with_capacity(covariate_cols.len());
        let mut cov_ok = true;
        for &j in &covariate_cols {
            match fields[j].parse::<f64>() {
                Ok(v) if v.is_finite() => covariates.push(v),
                _ => {
                    errors.push(format!(
                        "line {line_no}: covariate '{}' must be finite, got '{}'",
                        columns[j], fields[j]
                    ));
                    cov_ok = false;
                    break;
                }
            }
        }
        if let (Some(row), Some(col), Some(y0), Some(y1), Some(d), Some(block), true) =
            (row, col, y0, y1, d, block, cov_ok)
        {
            parsed.push(Parsed { line: *line_no, row, col, y0, y1, d, block, covariates });
        }
    }
    if !errors.is_empty() {
        return Err(Error::Validation(errors));
    }
    if parsed.is_empty() {
        return Err(Error::Validation(vec!["no data rows".into()]));
    }

    let m_rows = parsed.iter().map(|p| p.row).max().unwrap() + 1;
    let m_cols = parsed.iter().map(|p| p.col).max().unwrap() + 1;
    let n = m_rows * m_cols;
    if parsed.len() != n {
        errors.push(format!(
            "grid is {m_rows}x{m_cols} = {n} cells but file has {} rows",
            parsed.len()
        ));
    }
    let mut seen: Vec<Option<usize>> = vec![None; n];
    for p in &parsed {
        let idx = p.row * m_cols + p.col;
        if let Some(first) = seen[idx] {
            errors.push(format!(
                "line {}: duplicate cell ({},{}) first seen on line {first}",
                p.line, p.row, p.col
            ));
        } else {
            seen[idx] = Some(p.line);
        }
    }
    if errors.is_empty() {
        for (idx, s) in seen.iter().enumerate() {
            if s.is_none() {
                errors.push(format!("missing cell ({},{})", idx / m_cols, idx % m_cols));
                if errors.len() >= MAX_REPORTED_ERRORS {
                    break;
                }
            }
        }
    }
    if !errors.is_empty() {
        return Err(Error::Validation(errors));
    }

    let get_meta_f64 = |key: &str, default: f64| -> Result<f64> {
        match meta.get(key) {
            Some(v) => v
                .parse::<f64>()
                .map_err(|_| Error::Validation(vec![format!("bad header value {key}={v}")])),
            None => Ok(default),
        }
    };
    let spacing = get_meta_f64("spacing", 1.0)?;
    let origin = (get_meta_f64("origin_x", 0.0)?, get_meta_f64("origin_y", 0.0)?);
    let grid = Grid::new(m_rows, m_cols, spacing, origin)?;

    let mut y0 = vec![None; n];
    let mut y1 = vec![None; n];
    let mut d = vec![0u8; n];
    let mut x = Array2::zeros((n, covariate_cols.len()));
    let mut block_raw: Vec<Option<usize>> = vec![None; n];
    for p in &parsed {
        let idx = p.row * m_cols + p.col;
        y0[idx] = p.y0;
        y1[idx] = p.y1;
        d[idx] = p.d;
        block_raw[idx] = p.block;
        for (j, &v) in p.covariates.iter().enumerate() {
            x[(idx, j)] = v;
        }
    }

    let blocks = if idx_block.is_some() {
        // Remap arbitrary labels onto a dense range.
        let mut distinct: Vec<usize> = block_raw.iter().map(|b| b.unwrap()).collect();
        distinct.sort_unstable();
        distinct.dedup();
        let labels: Vec<usize> = block_raw
            .iter()
            .map(|b| distinct.binary_search(&b.unwrap()).unwrap())
            .collect();
        Some(BlockPartition::from_labels(labels)?)
    } else {
        None
    };

    GridDataset::new(grid, y0, y1, d, x, covariate_names, blocks)
}

/// Read and validate a columnar grid file from disk.
pub fn ingest(path: &Path) -> Result<GridDataset> {
    let text = std::fs::read_to_string(path)?;
    ingest_str(&text)
}

/// One-paragraph dataset summary for the console.
pub fn dataset_summary(data: &GridDataset) -> String {
    format!(
        "{} x {} grid, {} pixels; treated fraction {:.4}; missing Y0 {:.4}, Y1 {:.4}; \
         covariates [{}]{}",
        data.grid.m_rows(),
        data.grid.m_cols(),
        data.n_pixels(),
        data.treated_fraction(),
        data.missing_fraction(0),
        data.missing_fraction(1),
        data.covariate_names.join(", "),
        match &data.blocks {
            Some(b) => format!("; {} blocks", b.n_blocks()),
            None => String::new(),
        }
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_written_file_round_trips_values() {
        let text = "\
# stdml-dataset v1
# spacing=0.5
# origin_x=1
# origin_y=2
row,col,Y0,Y1,D,elevation
0,0,1.5,2.5,0,10
0,1,NA,3.5,1,20
1,0,0.25,NA,0,30
1,1,4,5,1,40
";
        let data = ingest_str(text).unwrap();
        assert_eq!(data.grid.m_rows(), 2);
        assert_eq!(data.grid.spacing(), 0.5);
        assert_eq!(data.grid.origin(), (1.0, 2.0));
        assert_eq!(data.y0[0], Some(1.5));
        assert_eq!(data.y0[1], None);
        assert_eq!(data.y1[2], None);
        assert_eq!(data.d, vec![0, 1, 0, 1]);
        assert_eq!(data.covariate_names, vec!["elevation"]);
        assert_eq!(data.x[(3, 0)], 40.0);
    }

    #[test]
    fn bad_treatment_value_names_the_line() {
        let text = "\
row,col,Y0,Y1,D
0,0,1,2,0
0,1,1,2,2
1,0,1,2,0
1,1,1,2,1
";
        match ingest_str(text) {
            Err(Error::Validation(msgs)) => {
                assert!(msgs.iter().any(|m| m.contains("line 3") && m.contains("D")), "{msgs:?}");
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_and_missing_cells_are_reported() {
        let text = "\
row,col,Y0,Y1,D
0,0,1,2,0
0,0,1,2,0
1,1,1,2,1
1,0,1,2,1
";
        match ingest_str(text) {
            Err(Error::Validation(msgs)) => {
                assert!(msgs.iter().any(|m| m.contains("duplicate cell (0,0)")), "{msgs:?}");
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn export_then_ingest_is_identity() {
        use crate::dgp::{simulate_pixel, PixelSimConfig};
        let cfg = PixelSimConfig { m: 8, ..PixelSimConfig::new(1.0, 33) };
        let (data, _) = simulate_pixel(&cfg).unwrap();
        let text = export_dataset(&data, &[("seed".into(), "33".into())]);
        let back = ingest_str(&text).unwrap();
        assert_eq!(back.grid, data.grid);
        assert_eq!(back.y0, data.y0);
        assert_eq!(back.y1, data.y1);
        assert_eq!(back.d, data.d);
        assert_eq!(back.x, data.x);
        assert_eq!(back.covariate_names, data.covariate_names);
        assert_eq!(back.blocks, data.blocks);
    }

    #[test]
    fn block_labels_round_trip() {
        use crate::dgp::{simulate_block, BlockSimConfig};
        let cfg = BlockSimConfig { m: 8, ..BlockSimConfig::new(1.0, 34) };
        let (data, _) = simulate_block(&cfg).unwrap();
        let text = export_dataset(&data, &[]);
        let back = ingest_str(&text).unwrap();
        assert_eq!(back.blocks, data.blocks);
    }
}
