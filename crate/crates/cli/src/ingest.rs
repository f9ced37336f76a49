//! CSV ingestion with schema checks and unit normalisation.
//!
//! Row numbers in errors and notes are 1-based line numbers of the file,
//! so the header is line 1 and the first record line 2.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use sentfeed::panel::{FirmMonthPanel, PanelRow};
use sentfeed::{Month, MonthlySeries};

use crate::config::{Inputs, Unit};
use crate::CliError;

/// A row that was dropped or altered during ingestion.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestNote {
    pub file: String,
    pub row: usize,
    pub action: &'static str,
    pub reason: String,
}

/// Monthly factor returns keyed by month, columns in `names` order.
#[derive(Debug, Clone, Default)]
pub struct Factors {
    pub names: Vec<String>,
    pub rows: BTreeMap<Month, Vec<f64>>,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub sentiment: Option<MonthlySeries>,
    /// Decimal returns.
    pub market: Option<MonthlySeries>,
    /// Decimal returns; breadth already carried from quarterly data.
    pub panel: Option<FirmMonthPanel>,
    pub factors: Option<Factors>,
    pub notes: Vec<IngestNote>,
    /// Files read, in a fixed order.
    pub files: Vec<PathBuf>,
}

const PANEL_REQUIRED: [&str; 8] = ["firm_id", "month", "ret", "breadth", "retail", "optionable", "me", "vix"];

fn file_label(p: &Path) -> String {
    p.file_name().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned())
}

struct Table {
    path: PathBuf,
    headers: Vec<String>,
    /// `(line, fields)`.
    records: Vec<(usize, Vec<String>)>,
}

impl Table {
    fn read(path: &Path) -> Result<Self, CliError> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        let headers: Vec<String> = rdr
            .headers()
            .map_err(|e| CliError::SchemaViolation { file: path.into(), row: 1, msg: e.to_string() })?
            .iter()
            .map(|h| h.to_ascii_lowercase())
            .collect();
        let mut records = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| {
                let row = e.position().map_or(0, |p| p.line() as usize);
                CliError::SchemaViolation { file: path.into(), row, msg: e.to_string() }
            })?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            records.push((line, rec.iter().map(str::to_string).collect()));
        }
        Ok(Self { path: path.into(), headers, records })
    }

    fn col(&self, name: &str) -> Result<usize, CliError> {
        self.headers.iter().position(|h| h == name).ok_or_else(|| self.violation(1, format!("missing column `{name}`")))
    }

    fn violation(&self, row: usize, msg: String) -> CliError {
        CliError::SchemaViolation { file: self.path.clone(), row, msg }
    }

    fn month(&self, row: usize, s: &str) -> Result<Month, CliError> {
        s.parse().map_err(|e: sentfeed::month::MonthParseError| self.violation(row, e.to_string()))
    }

    fn number(&self, row: usize, col: &str, s: &str) -> Result<f64, CliError> {
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(self.violation(row, format!("`{col}`: expected a finite number, found `{s}`"))),
        }
    }
}

/// Reads a `month,<value_col>` file into a contiguous monthly series.
pub fn read_series(path: &Path, value_col: &str, unit: Unit) -> Result<MonthlySeries, CliError> {
    let t = Table::read(path)?;
    let (cm, cv) = (t.col("month")?, t.col(value_col)?);
    let mut pairs: Vec<(Month, f64)> = Vec::with_capacity(t.records.len());
    for (line, rec) in &t.records {
        let m = t.month(*line, &rec[cm])?;
        let v = unit.to_decimal(t.number(*line, value_col, &rec[cv])?);
        if let Some((prev, _)) = pairs.last() {
            if m <= *prev {
                return Err(CliError::NonMonotoneDates { file: path.into(), row: *line });
            }
            if m != prev.offset(1) {
                return Err(t.violation(*line, format!("missing month {} before {m}", prev.offset(1))));
            }
        }
        pairs.push((m, v));
    }
    MonthlySeries::from_pairs(&pairs).map_err(|e| t.violation(1, e.to_string()))
}

/// Quarterly breadth `firm_id,quarter,breadth`, keyed by (firm, first month
/// of the quarter).
pub fn read_quarterly_breadth(path: &Path) -> Result<HashMap<(String, Month), f64>, CliError> {
    let t = Table::read(path)?;
    let (cf, cq, cb) = (t.col("firm_id")?, t.col("quarter")?, t.col("breadth")?);
    let mut out = HashMap::with_capacity(t.records.len());
    for (line, rec) in &t.records {
        let q = Month::from_quarter(&rec[cq]).map_err(|e| t.violation(*line, e.to_string()))?;
        let b = t.number(*line, "breadth", &rec[cb])?;
        if out.insert((rec[cf].clone(), q), b).is_some() {
            return Err(t.violation(*line, format!("duplicate (firm, quarter) row: {} {}", rec[cf], rec[cq])));
        }
    }
    Ok(out)
}

fn quarter_start(m: Month) -> Month {
    m.offset(-i64::from((m.month() - 1) % 3))
}

/// Reads the firm-month panel. Rows with an empty return are dropped and
/// noted; with `quarterly` breadth, each quarter's value is carried to its
/// three months and replaces any monthly breadth column.
pub fn read_panel(
    path: &Path,
    ret_unit: Unit,
    quarterly: Option<&HashMap<(String, Month), f64>>,
) -> Result<(FirmMonthPanel, Vec<IngestNote>), CliError> {
    let t = Table::read(path)?;
    let mut idx = HashMap::new();
    for name in PANEL_REQUIRED {
        match t.col(name) {
            Ok(i) => {
                idx.insert(name, i);
            }
            Err(e) if !(name == "breadth" && quarterly.is_some()) => return Err(e),
            Err(_) => {}
        }
    }
    let extra: Vec<(usize, String)> =
        t.headers.iter().enumerate().filter(|(_, h)| !PANEL_REQUIRED.contains(&h.as_str())).map(|(i, h)| (i, h.clone())).collect();
    let label = file_label(path);
    let mut notes = Vec::new();
    let mut seen: HashMap<(String, Month), usize> = HashMap::new();
    let mut rows = Vec::with_capacity(t.records.len());
    for (line, rec) in &t.records {
        let firm = rec[idx["firm_id"]].clone();
        if firm.is_empty() {
            return Err(t.violation(*line, "empty firm_id".into()));
        }
        let month = t.month(*line, &rec[idx["month"]])?;
        if let Some(first) = seen.insert((firm.clone(), month), *line) {
            return Err(t.violation(*line, format!("duplicate (firm, month) row: {firm} {month} (first at row {first})")));
        }
        if rec[idx["ret"]].is_empty() {
            notes.push(IngestNote { file: label.clone(), row: *line, action: "dropped", reason: "missing return".into() });
            continue;
        }
        let ret = ret_unit.to_decimal(t.number(*line, "ret", &rec[idx["ret"]])?);
        let breadth = match quarterly {
            Some(q) => match q.get(&(firm.clone(), quarter_start(month))) {
                Some(b) => *b,
                None => {
                    notes.push(IngestNote { file: label.clone(), row: *line, action: "dropped", reason: "no quarterly breadth".into() });
                    continue;
                }
            },
            None => t.number(*line, "breadth", &rec[idx["breadth"]])?,
        };
        let num = |c: &str| t.number(*line, c, &rec[idx[c]]);
        let extras = extra
            .iter()
            .map(|(i, name)| if rec[*i].is_empty() { Ok(f64::NAN) } else { t.number(*line, name, &rec[*i]) })
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push(PanelRow {
            firm_id: firm,
            month,
            ret,
            breadth,
            retail: num("retail")?,
            optionable: num("optionable")?,
            me: num("me")?,
            vix: num("vix")?,
            extra: extras,
        });
    }
    let names: Vec<String> = extra.into_iter().map(|(_, n)| n).collect();
    let panel = FirmMonthPanel::from_rows(rows, &names).map_err(|e| t.violation(1, e.to_string()))?;
    Ok((panel, notes))
}

/// Merges `month,<factor...>` files on their common months.
pub fn read_factors(paths: &[PathBuf]) -> Result<Factors, CliError> {
    let mut out = Factors::default();
    for (k, path) in paths.iter().enumerate() {
        let t = Table::read(path)?;
        let cm = t.col("month")?;
        let cols: Vec<usize> = (0..t.headers.len()).filter(|&i| i != cm).collect();
        let mut rows: BTreeMap<Month, Vec<f64>> = BTreeMap::new();
        let mut prev: Option<Month> = None;
        for (line, rec) in &t.records {
            let m = t.month(*line, &rec[cm])?;
            if prev.is_some_and(|p| m <= p) {
                return Err(CliError::NonMonotoneDates { file: path.clone(), row: *line });
            }
            prev = Some(m);
            let v = cols.iter().map(|&i| t.number(*line, &t.headers[i], &rec[i])).collect::<Result<Vec<_>, _>>()?;
            rows.insert(m, v);
        }
        out.names.extend(cols.iter().map(|&i| t.headers[i].clone()));
        if k == 0 {
            out.rows = rows;
        } else {
            out.rows = std::mem::take(&mut out.rows)
                .into_iter()
                .filter_map(|(m, mut v)| {
                    rows.get(&m).map(|w| {
                        v.extend_from_slice(w);
                        (m, v)
                    })
                })
                .collect();
        }
    }
    Ok(out)
}

/// Reads every configured input. Files must exist and parse.
pub fn ingest(inputs: &Inputs) -> Result<Dataset, CliError> {
    let mut ds = Dataset::default();
    if let Some(p) = &inputs.sentiment {
        ds.sentiment = Some(read_series(p, "value", Unit::Decimal)?);
        ds.files.push(p.clone());
    }
    if let Some(p) = &inputs.market {
        ds.market = Some(read_series(p, "ret", inputs.market_unit)?);
        ds.files.push(p.clone());
    }
    let quarterly = match &inputs.breadth_quarterly {
        Some(p) => {
            ds.files.push(p.clone());
            Some(read_quarterly_breadth(p)?)
        }
        None => None,
    };
    if let Some(p) = &inputs.panel {
        let (panel, notes) = read_panel(p, inputs.panel_ret_unit, quarterly.as_ref())?;
        ds.panel = Some(panel);
        ds.notes.extend(notes);
        ds.files.push(p.clone());
    } else if quarterly.is_some() {
        return Err(CliError::Validation("inputs.breadth_quarterly given without inputs.panel".into()));
    }
    if !inputs.factors.is_empty() {
        ds.factors = Some(read_factors(&inputs.factors)?);
        ds.files.extend(inputs.factors.iter().cloned());
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn three_row_series() {
        let d = tempfile::tempdir().unwrap();
        let p = file(d.path(), "s.csv", "month,value\n2000-01,0.5\n2000-02,-1\n2000-03,2\n");
        let s = read_series(&p, "value", Unit::Decimal).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.start().to_string(), "2000-01");
        let p = file(d.path(), "m.csv", "month,ret\n2000-01,25\n2000-02,-10\n");
        assert_eq!(read_series(&p, "ret", Unit::Bps).unwrap().values(), &[0.0025, -0.001]);
    }

    #[test]
    fn series_errors_carry_rows() {
        let d = tempfile::tempdir().unwrap();
        let p = file(d.path(), "s.csv", "month,value\n2000-02,1\n2000-01,2\n");
        assert!(matches!(read_series(&p, "value", Unit::Decimal), Err(CliError::NonMonotoneDates { row: 3, .. })));
        let p = file(d.path(), "s.csv", "month,value\n2000-01,1\n2000-02,abc\n");
        assert!(matches!(read_series(&p, "value", Unit::Decimal), Err(CliError::SchemaViolation { row: 3, .. })));
        let p = file(d.path(), "s.csv", "month,level\n2000-01,1\n");
        assert!(matches!(read_series(&p, "value", Unit::Decimal), Err(CliError::SchemaViolation { row: 1, .. })));
        let p = file(d.path(), "s.csv", "month,value\n2000-01,1\n2000-03,1\n");
        assert!(matches!(read_series(&p, "value", Unit::Decimal), Err(CliError::SchemaViolation { row: 3, .. })));
    }

    const HEAD: &str = "firm_id,month,ret,breadth,retail,optionable,me,vix,size_rank\n";

    #[test]
    fn duplicate_firm_month_named_by_row() {
        let d = tempfile::tempdir().unwrap();
        let body = format!("{HEAD}A,2000-01,0.01,0.2,0.1,1,5,20,1\nB,2000-01,0.02,0.3,0.1,0,5,20,2\nA,2000-01,0.03,0.2,0.1,1,5,20,1\n");
        let p = file(d.path(), "p.csv", &body);
        let err = read_panel(&p, Unit::Decimal, None).unwrap_err();
        assert!(matches!(err, CliError::SchemaViolation { row: 4, .. }), "{err}");
        assert!(err.to_string().contains("row 4"));
    }

    #[test]
    fn panel_extras_and_dropped_rows() {
        let d = tempfile::tempdir().unwrap();
        let body = format!("{HEAD}A,2000-01,100,0.2,0.1,1,5,20,1\nB,2000-01,,0.3,0.1,0,5,20,\n");
        let p = file(d.path(), "p.csv", &body);
        let (panel, notes) = read_panel(&p, Unit::Bps, None).unwrap();
        assert_eq!(panel.len(), 1);
        assert_eq!(panel.column("ret").unwrap(), &[0.01]);
        assert_eq!(panel.column("size_rank").unwrap(), &[1.0]);
        assert_eq!(notes, vec![IngestNote { file: "p.csv".into(), row: 3, action: "dropped", reason: "missing return".into() }]);
    }

    #[test]
    fn quarterly_breadth_carried_to_months() {
        let d = tempfile::tempdir().unwrap();
        let q = file(d.path(), "q.csv", "firm_id,quarter,breadth\nA,2000Q1,0.25\nA,2000Q2,0.75\n");
        let mut body = String::from("firm_id,month,ret,retail,optionable,me,vix\n");
        for m in 1..=6 {
            body.push_str(&format!("A,2000-{m:02},0.01,0.5,1,1,20\n"));
        }
        let p = file(d.path(), "p.csv", &body);
        let qb = read_quarterly_breadth(&q).unwrap();
        let (panel, notes) = read_panel(&p, Unit::Decimal, Some(&qb)).unwrap();
        assert!(notes.is_empty());
        assert_eq!(panel.column("breadth").unwrap(), &[0.25, 0.25, 0.25, 0.75, 0.75, 0.75]);
    }

    #[test]
    fn factors_merge_on_common_months() {
        let d = tempfile::tempdir().unwrap();
        let a = file(d.path(), "a.csv", "month,mkt\n2000-01,1\n2000-02,2\n2000-03,3\n");
        let b = file(d.path(), "b.csv", "month,smb,hml\n2000-02,4,5\n2000-03,6,7\n");
        let f = read_factors(&[a, b]).unwrap();
        assert_eq!(f.names, vec!["mkt", "smb", "hml"]);
        assert_eq!(f.rows.len(), 2);
        assert_eq!(f.rows[&"2000-03".parse().unwrap()], vec![3.0, 6.0, 7.0]);
    }
}
