use std::io::Read;

use crate::error::CliError;

/// A numeric CSV table; `header` is present when the first record's first
/// field is not a number.
#[derive(Debug)]
pub struct Table {
    pub header: Option<Vec<String>>,
    pub rows: Vec<Vec<f64>>,
}

pub fn read_source(path: &str) -> Result<String, CliError> {
    let mut text = String::new();
    if path == "-" {
        std::io::stdin()
            .read_to_string(&mut text)
            .map_err(|e| CliError::Data(format!("stdin: {e}")))?;
    } else {
        text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{path}: {e}")))?;
    }
    Ok(text)
}

pub fn parse_table(text: &str, source: &str) -> Result<Table, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut header = None;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            CliError::Data(format!("{source}: line {line}: {e}"))
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.iter().all(str::is_empty) {
            continue;
        }
        if i == 0 && rec.get(0).is_some_and(|t| t.parse::<f64>().is_err()) {
            header = Some(rec.iter().map(str::to_string).collect());
            continue;
        }
        let row = rec
            .iter()
            .enumerate()
            .map(|(j, t)| match t.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(CliError::Data(format!("{source}: line {line}, column {}: not a finite number: {t:?}", j + 1))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::Data(format!("{source}: no data rows")));
    }
    Ok(Table { header, rows })
}

/// The single column of a one-column table.
pub fn read_column(path: &str) -> Result<Vec<f64>, CliError> {
    let t = parse_table(&read_source(path)?, path)?;
    if let Some(r) = t.rows.iter().find(|r| r.len() != 1) {
        return Err(CliError::Data(format!("{path}: expected one column, found {}", r.len())));
    }
    Ok(t.rows.into_iter().map(|r| r[0]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_detected_by_first_token() {
        let t = parse_table("x\n1\n2.5\n", "t").unwrap();
        assert_eq!(t.header, Some(vec!["x".to_string()]));
        assert_eq!(t.rows, vec![vec![1.0], vec![2.5]]);
        let t = parse_table("1,2\n3,4\n", "t").unwrap();
        assert!(t.header.is_none());
        assert_eq!(t.rows.len(), 2);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let e = parse_table("x\n1\nabc\n", "t").unwrap_err().to_string();
        assert!(e.contains("line 3"), "{e}");
        let e = parse_table("1,2\n3\n", "t").unwrap_err().to_string();
        assert!(e.contains("line 2"), "{e}");
        assert!(parse_table("y\n", "t").is_err());
    }
}
