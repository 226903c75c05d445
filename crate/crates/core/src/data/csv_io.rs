//! Delimited-text formats: series CSV (first column `timestamp`, empty cell =
//! missing) and the side-car role file (`channel,role` rows).

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::table::{Channel, Role, TimeSeriesTable};
use crate::error::{Error, Result};

pub type RoleMap = Vec<(String, Role)>;

pub fn read_roles<R: Read>(reader: R) -> Result<RoleMap> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut out = RoleMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(Error::Config(format!("role file row {} must be `channel,role`", i + 1)));
        }
        if i == 0 && rec[0].eq_ignore_ascii_case("channel") && rec[1].eq_ignore_ascii_case("role") {
            continue;
        }
        let name = rec[0].to_string();
        if out.iter().any(|(n, _)| *n == name) {
            return Err(Error::Config(format!("channel `{name}` listed twice in role file")));
        }
        out.push((name, rec[1].parse()?));
    }
    Ok(out)
}

pub fn load_roles(path: &Path) -> Result<RoleMap> {
    read_roles(std::fs::File::open(path)?)
}

pub fn write_roles<W: Write>(writer: W, table: &TimeSeriesTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["channel", "role"])?;
    for c in table.channels() {
        w.write_record([c.name.as_str(), &c.role.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a series CSV. Columns absent from `roles` are dropped; a role entry
/// naming a column absent from the file is a configuration error.
pub fn read_csv<R: Read>(reader: R, roles: &RoleMap) -> Result<TimeSeriesTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || !headers[0].eq_ignore_ascii_case("timestamp") {
        return Err(Error::Ingestion("first column must be `timestamp`".into()));
    }
    let mut columns = Vec::new();
    for (name, role) in roles {
        let col = headers
            .iter()
            .position(|h| h == name)
            .filter(|&c| c > 0)
            .ok_or_else(|| Error::Config(format!("role map names unknown channel `{name}`")))?;
        columns.push((col, Channel::new(name.clone(), *role)));
    }
    columns.sort_by_key(|(c, _)| *c);

    let mut timestamps = Vec::new();
    let mut flat = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != headers.len() {
            return Err(Error::Ingestion(format!(
                "row {} has {} fields, header has {}",
                row + 1,
                rec.len(),
                headers.len()
            )));
        }
        timestamps.push(rec[0].to_string());
        for (col, ch) in &columns {
            let cell = &rec[*col];
            let v = if cell.is_empty() {
                f64::NAN
            } else {
                let v: f64 = cell.parse().map_err(|_| {
                    Error::Ingestion(format!("row {}, channel `{}`: bad number `{cell}`", row + 1, ch.name))
                })?;
                if !v.is_finite() {
                    return Err(Error::Ingestion(format!(
                        "row {}, channel `{}`: non-finite value; use an empty cell for missing",
                        row + 1,
                        ch.name
                    )));
                }
                v
            };
            flat.push(v);
        }
    }
    let values = Array2::from_shape_vec((timestamps.len(), columns.len()), flat).expect("row-major fill");
    TimeSeriesTable::new(timestamps, columns.into_iter().map(|(_, c)| c).collect(), values)
}

pub fn load_csv(path: &Path, roles: &RoleMap) -> Result<TimeSeriesTable> {
    read_csv(std::fs::File::open(path)?, roles)
}

/// Writes values with shortest round-trip formatting; missing entries become empty cells.
pub fn write_csv<W: Write>(writer: W, table: &TimeSeriesTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["timestamp".to_string()];
    header.extend(table.channels().iter().map(|c| c.name.clone()));
    w.write_record(&header)?;
    let mut rec = Vec::with_capacity(header.len());
    for t in 0..table.len() {
        rec.clear();
        rec.push(table.timestamps()[t].clone());
        for c in 0..table.channels().len() {
            rec.push(table.get(t, c).map(|v| v.to_string()).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(path: &Path, table: &TimeSeriesTable) -> Result<()> {
    write_csv(std::io::BufWriter::new(std::fs::File::create(path)?), table)
}

pub fn save_roles(path: &Path, table: &TimeSeriesTable) -> Result<()> {
    write_roles(std::fs::File::create(path)?, table)
}

/// Role assignment used for the Agtrup (BlueKolding) treatment-plant dataset.
pub fn agtrup_roles() -> RoleMap {
    vec![
        ("T1_NH4".into(), Role::State),
        ("T1_PO4".into(), Role::State),
        ("IN_METAL_Q".into(), Role::Control),
        ("T1_O2".into(), Role::Control),
        ("TEMPERATURE".into(), Role::Exogenous),
        ("IN_Q".into(), Role::Exogenous),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "timestamp,a,b,c\n0,1.5,,3\n1,2,0.25,\n2,-1e-3,7,8\n";

    fn roles() -> RoleMap {
        vec![
            ("a".into(), Role::State),
            ("b".into(), Role::Control),
            ("c".into(), Role::Exogenous),
        ]
    }

    #[test]
    fn parses_missing_cells() {
        let t = read_csv(SAMPLE.as_bytes(), &roles()).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.get(0, 1), None);
        assert_eq!(t.get(1, 2), None);
        assert_eq!(t.get(2, 0), Some(-1e-3));
        assert_eq!(t.count_missing(), 2);
    }

    #[test]
    fn full_file_has_all_ones_mask() {
        let t = read_csv("timestamp,a,b,c\n0,1,2,3\n1,4,5,6\n".as_bytes(), &roles()).unwrap();
        assert!(t.observed().iter().all(|o| *o));
    }

    #[test]
    fn round_trip_is_exact() {
        let t = read_csv(SAMPLE.as_bytes(), &roles()).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &t).unwrap();
        let back = read_csv(buf.as_slice(), &roles()).unwrap();
        assert_eq!(t.observed(), back.observed());
        for (a, b) in t.values().iter().zip(back.values()) {
            assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()));
        }
    }

    #[test]
    fn unknown_role_channel_is_config_error() {
        let mut r = roles();
        r.push(("missing".into(), Role::State));
        assert!(matches!(read_csv(SAMPLE.as_bytes(), &r), Err(Error::Config(_))));
    }

    #[test]
    fn unmapped_columns_dropped() {
        let t = read_csv(SAMPLE.as_bytes(), &vec![("c".into(), Role::State)]).unwrap();
        assert_eq!(t.channels().len(), 1);
        assert_eq!(t.channels()[0].name, "c");
    }

    #[test]
    fn irregular_grid_rejected() {
        let bad = "timestamp,a\n0,1\n1,2\n5,3\n";
        let r = vec![("a".to_string(), Role::State)];
        assert!(matches!(read_csv(bad.as_bytes(), &r), Err(Error::Ingestion(_))));
        assert!(read_csv("time,a\n0,1\n".as_bytes(), &r).is_err());
        assert!(read_csv("timestamp,a\n0,abc\n".as_bytes(), &r).is_err());
        assert!(read_csv("timestamp,a\n0,NaN\n".as_bytes(), &r).is_err());
    }

    #[test]
    fn role_file_parsing() {
        let r = read_roles("channel,role\nx,state\n# comment\nu,control\n".as_bytes()).unwrap();
        assert_eq!(r, vec![("x".into(), Role::State), ("u".into(), Role::Control)]);
        assert!(read_roles("x,state\nx,control\n".as_bytes()).is_err());
        assert!(read_roles("x,bogus\n".as_bytes()).is_err());
    }

    #[test]
    fn agtrup_layout() {
        let header = "timestamp,T1_NH4,T1_PO4,IN_METAL_Q,T1_O2,TEMPERATURE,IN_Q\n";
        let body = "2020-01-01T00:00:00,1,2,3,4,5,6\n2020-01-01T00:02:00,1,2,3,4,5,6\n";
        let t = read_csv(format!("{header}{body}").as_bytes(), &agtrup_roles()).unwrap();
        assert_eq!(t.state_indices().len(), 2);
        assert_eq!(t.covariate_indices().len(), 4);
    }
}
