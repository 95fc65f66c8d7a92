//! Reads the per-sample CSV dump back into sample results.

use std::path::Path;

use cloudcast_core::metrics::SkyClass;
use cloudcast_core::report::SampleResult;

use crate::error::CliError;

const KEY_COLUMNS: usize = 5;

pub fn read_samples(path: &Path) -> Result<Vec<SampleResult>, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let bad = |line: u64, detail: String| CliError::config(format!("{} line {line}: {detail}", path.display()));
    let mut reader = csv::Reader::from_reader(bytes.as_slice());
    let header = reader.headers().map_err(|e| bad(1, e.to_string()))?.clone();
    let steps = header.iter().filter(|h| h.starts_with("pred_")).count();
    if steps == 0 || header.len() != KEY_COLUMNS + 3 * steps {
        return Err(bad(1, format!("unexpected header with {} columns", header.len())));
    }
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i as u64 + 2;
        let record = record.map_err(|e| bad(line, e.to_string()))?;
        if record.len() != header.len() {
            return Err(bad(line, format!("{} fields, expected {}", record.len(), header.len())));
        }
        let condition = SkyClass::parse(&record[4]).ok_or_else(|| bad(line, format!("unknown condition {:?}", &record[4])))?;
        let values = record
            .iter()
            .skip(KEY_COLUMNS)
            .map(|v| v.parse::<f64>().map_err(|e| bad(line, format!("{v:?}: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        out.push(SampleResult {
            net: record[0].to_string(),
            scenario: record[1].to_string(),
            site: record[2].to_string(),
            timestamp: record[3].to_string(),
            condition,
            pred: values[..steps].to_vec(),
            actual: values[steps..2 * steps].to_vec(),
            persistence: values[2 * steps..].to_vec(),
        });
    }
    Ok(out)
}
