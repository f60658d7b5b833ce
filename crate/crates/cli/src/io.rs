//! File formats owned by the command line: token stream files and
//! embedding tables, plus path checks done before any work starts.

use std::fmt::Write as _;
use std::path::Path;

use hmt_core::mano::Side;
use ndarray::Array2;

use crate::CliError;

/// Fails unless `path` is an existing file.
pub fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::data(format!("{} does not exist", path.display())))
    }
}

/// Fails unless the directory that will hold `path` exists.
pub fn require_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => Err(CliError::data(format!(
            "output directory {} does not exist",
            p.display()
        ))),
        _ => Ok(()),
    }
}

/// One line of a token file: `id<TAB>sides<TAB>ids`, sides comma-separated
/// in block order, ids space-separated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenLine {
    pub id: String,
    pub sides: Vec<Side>,
    pub ids: Vec<u32>,
}

fn parse_side(s: &str) -> Option<Side> {
    match s {
        "left" => Some(Side::Left),
        "right" => Some(Side::Right),
        _ => None,
    }
}

impl TokenLine {
    pub fn parse(line: &str, number: usize) -> Result<Self, CliError> {
        let bad = |what: &str| CliError::data(format!("token file line {number}: {what}"));
        let mut fields = line.split('\t');
        let (Some(id), Some(sides), Some(ids), None) =
            (fields.next(), fields.next(), fields.next(), fields.next())
        else {
            return Err(bad("expected three tab-separated fields"));
        };
        let sides = if sides.is_empty() {
            Vec::new()
        } else {
            sides
                .split(',')
                .map(|s| parse_side(s).ok_or_else(|| bad(&format!("unknown hand {s:?}"))))
                .collect::<Result<_, _>>()?
        };
        let ids = ids
            .split_whitespace()
            .map(|t| t.parse::<u32>().map_err(|_| bad(&format!("bad id {t:?}"))))
            .collect::<Result<_, _>>()?;
        Ok(TokenLine {
            id: id.to_string(),
            sides,
            ids,
        })
    }

    pub fn format(&self) -> String {
        let sides: Vec<&str> = self.sides.iter().map(|s| s.as_str()).collect();
        let mut out = format!("{}\t{}\t", self.id, sides.join(","));
        for (i, id) in self.ids.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            write!(out, "{id}").expect("write to string");
        }
        out
    }
}

pub fn read_token_file(path: &Path) -> Result<Vec<TokenLine>, CliError> {
    std::fs::read_to_string(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| TokenLine::parse(l, n + 1))
        .collect()
}

pub fn write_token_file(path: &Path, lines: &[TokenLine]) -> Result<(), CliError> {
    let text: String = lines.iter().map(|l| l.format() + "\n").collect();
    std::fs::write(path, text)?;
    Ok(())
}

/// Embedding table as JSON lines, one array of numbers per row.
pub fn read_embeddings(path: &Path) -> Result<Array2<f64>, CliError> {
    let rows: Vec<Vec<f64>> = std::fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect::<Result<_, _>>()?;
    let width = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != width) {
        return Err(CliError::data(format!(
            "{}: rows differ in width",
            path.display()
        )));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((flat.len() / width.max(1), width), flat)
        .map_err(|e| CliError::data(e.to_string()))
}
