//! Long-format panel CSV (`id,time,y,x1..xp`) and result writers.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, Array3};

use crate::data::Dataset;
use crate::error::{MlarError, Result};
use crate::predict::PredictionSurface;

/// A dataset with the covariate names from the file header.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub data: Dataset,
    pub covariate_names: Vec<String>,
}

pub fn read_panel_csv(path: impl AsRef<Path>) -> Result<Panel> {
    let file = std::fs::File::open(path.as_ref())?;
    read_panel(file)
}

struct Row {
    line: usize,
    time: usize,
    y: f64,
    x: Vec<f64>,
}

fn parse_num(field: &str, what: &str, line: usize) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| MlarError::Input { line, msg: format!("cannot parse {what} '{field}' as a number") })
}

pub fn read_panel(reader: impl Read) -> Result<Panel> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let names: Vec<String> = header.iter().map(|s| s.to_string()).collect();
    if names.len() < 3 || names[0] != "id" || names[1] != "time" || names[2] != "y" {
        return Err(MlarError::Input { line: 1, msg: "header must start with id,time,y".into() });
    }
    let covariate_names = names[3..].to_vec();
    let p = covariate_names.len();

    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<Row>> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != p + 3 {
            return Err(MlarError::Input { line, msg: format!("expected {} fields, found {}", p + 3, rec.len()) });
        }
        let id = rec[0].to_string();
        let time: usize = rec[1]
            .parse()
            .ok()
            .filter(|&t| t >= 1)
            .ok_or_else(|| MlarError::Input { line, msg: format!("time '{}' is not a positive integer", &rec[1]) })?;
        let y = parse_num(&rec[2], "response", line)?;
        let x = (0..p)
            .map(|j| parse_num(&rec[3 + j], &covariate_names[j], line))
            .collect::<Result<Vec<_>>>()?;
        let entry = rows.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            Vec::new()
        });
        if let Some(prev) = entry.iter().find(|r| r.time == time) {
            return Err(MlarError::Input {
                line,
                msg: format!("duplicate row for id {id}, time {time} (first seen on line {})", prev.line),
            });
        }
        entry.push(Row { line, time, y, x });
    }
    if order.is_empty() {
        return Err(MlarError::Input { line: 2, msg: "no data rows".into() });
    }
    let n_t = rows.values().flat_map(|r| r.iter().map(|row| row.time)).max().unwrap_or(0);
    let n = order.len();
    let mut y = Array2::zeros((n, n_t));
    let mut x = Array3::zeros((n, n_t, p));
    for (i, id) in order.iter().enumerate() {
        let subject = &rows[id];
        let mut seen = vec![false; n_t];
        for r in subject {
            seen[r.time - 1] = true;
            y[[i, r.time - 1]] = r.y;
            for j in 0..p {
                x[[i, r.time - 1, j]] = r.x[j];
            }
        }
        if let Some(t) = seen.iter().position(|s| !s) {
            return Err(MlarError::IncompletePanel(format!("id {id} has no row for time {}", t + 1)));
        }
    }
    Ok(Panel { data: Dataset::with_ids(y, x, order)?, covariate_names })
}

fn default_names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("x{j}")).collect()
}

pub fn write_panel(w: impl Write, data: &Dataset, covariate_names: Option<&[String]>) -> Result<()> {
    let names = covariate_names.map(|n| n.to_vec()).unwrap_or_else(|| default_names(data.p()));
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["id".to_string(), "time".into(), "y".into()];
    header.extend(names);
    wtr.write_record(&header)?;
    for i in 0..data.n() {
        for t in 0..data.t() {
            let mut rec = vec![data.ids[i].clone(), (t + 1).to_string(), data.y[[i, t]].to_string()];
            rec.extend(data.covariates(i, t).iter().map(|v| v.to_string()));
            wtr.write_record(&rec)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_panel_csv(path: impl AsRef<Path>, data: &Dataset, covariate_names: Option<&[String]>) -> Result<()> {
    write_panel(std::fs::File::create(path)?, data, covariate_names)
}

/// `id,time,component,alpha` with one-based components.
pub fn write_truth_csv(path: impl AsRef<Path>, ids: &[String], component: &[usize], alpha: &Array2<f64>) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["id", "time", "component", "alpha"])?;
    for (i, id) in ids.iter().enumerate() {
        for t in 0..alpha.ncols() {
            wtr.write_record([id.clone(), (t + 1).to_string(), (component[i] + 1).to_string(), alpha[[i, t]].to_string()])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// `id,time,alpha_hat,component` with the one-based MAP component.
pub fn write_alpha_csv(path: impl AsRef<Path>, ids: &[String], surface: &PredictionSurface) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["id", "time", "alpha_hat", "component"])?;
    for (i, id) in ids.iter().enumerate() {
        for t in 0..surface.alpha_hat.ncols() {
            wtr.write_record([
                id.clone(),
                (t + 1).to_string(),
                surface.alpha_hat[[i, t]].to_string(),
                (surface.component_map[i] + 1).to_string(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<Panel> {
        read_panel(s.as_bytes())
    }

    #[test]
    fn well_formed_panel() {
        let p = parse("id,time,y,age\na,1,2,0.5\na,2,3,0.5\na,3,1,0.5\nb,1,1,1.5\nb,3,2,1.5\nb,2,2,1.5\n").unwrap();
        assert_eq!((p.data.n(), p.data.t(), p.data.p()), (2, 3, 1));
        assert_eq!(p.data.ids, vec!["a", "b"]);
        assert_eq!(p.data.y[[1, 1]], 2.0);
        assert_eq!(p.covariate_names, vec!["age"]);
    }

    #[test]
    fn missing_row_names_the_id() {
        let e = parse("id,time,y,x1\n1,1,2,0\n1,2,3,0\n1,3,1,0\n2,1,1,1\n2,2,2,1\n").unwrap_err();
        assert!(matches!(&e, MlarError::IncompletePanel(m) if m.contains("id 2") && m.contains("time 3")), "{e}");
    }

    #[test]
    fn duplicate_reports_both_lines() {
        let e = parse("id,time,y\n1,1,2\n1,2,3\n1,1,1\n").unwrap_err();
        match e {
            MlarError::Input { line, msg } => {
                assert_eq!(line, 4);
                assert!(msg.contains("line 2"), "{msg}");
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn parse_failure_has_line_number() {
        let e = parse("id,time,y,x1\n1,1,2,0\n1,2,3,1,5\n").unwrap_err();
        assert!(matches!(e, MlarError::Input { line: 3, .. } | MlarError::Csv(_)), "{e}");
        let e = parse("id,time,y,x1\n1,1,2,0\n1,2,3,abc\n").unwrap_err();
        assert!(matches!(e, MlarError::Input { line: 3, .. }), "{e}");
        let e = parse("id,time,y\n1,0,2\n").unwrap_err();
        assert!(matches!(e, MlarError::Input { line: 2, .. }), "{e}");
        assert!(parse("ident,time,y\n").is_err());
    }

    #[test]
    fn round_trip() {
        let p = parse("id,time,y,x1,x2\nu,1,2,0.25,-1\nu,2,3,0.25,2\nv,1,1,1e-3,3\nv,2,2,1e-3,4\n").unwrap();
        let mut buf = Vec::new();
        write_panel(&mut buf, &p.data, Some(&p.covariate_names)).unwrap();
        let back = read_panel(buf.as_slice()).unwrap();
        assert_eq!(back, p);
    }
}
