use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One position report. Timestamps are integer seconds since the Unix epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AisRecord {
    pub vessel_id: String,
    pub timestamp: i64,
    pub lon: f64,
    pub lat: f64,
    /// Speed over ground, knots.
    pub sog: f64,
    /// Course over ground, degrees in `[0, 360)`.
    pub cog: f64,
}

impl AisRecord {
    pub fn position(&self) -> [f64; 2] {
        [self.lon, self.lat]
    }

    /// Channel values in model order (lon, lat, SOG, COG).
    pub fn channels(&self) -> [f64; 4] {
        [self.lon, self.lat, self.sog, self.cog]
    }

    pub fn is_valid(&self) -> bool {
        (-90.0..=90.0).contains(&self.lat)
            && (-180.0..=180.0).contains(&self.lon)
            && self.sog.is_finite()
            && self.sog >= 0.0
            && (0.0..360.0).contains(&self.cog)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dialect {
    /// MarineCadastre / US Coast Guard export.
    UsCoast,
    /// Danish Maritime Authority export.
    Danish,
}

struct Columns {
    mmsi: &'static str,
    time: &'static str,
    lat: &'static str,
    lon: &'static str,
    sog: &'static str,
    cog: &'static str,
}

impl Dialect {
    fn columns(self) -> Columns {
        match self {
            Dialect::UsCoast => Columns {
                mmsi: "MMSI",
                time: "BaseDateTime",
                lat: "LAT",
                lon: "LON",
                sog: "SOG",
                cog: "COG",
            },
            Dialect::Danish => Columns {
                mmsi: "MMSI",
                time: "# Timestamp",
                lat: "Latitude",
                lon: "Longitude",
                sog: "SOG",
                cog: "COG",
            },
        }
    }
}

impl FromStr for Dialect {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "us_coast" | "us-coast" | "uscoast" => Ok(Dialect::UsCoast),
            "danish" | "dma" => Ok(Dialect::Danish),
            other => Err(Error::Config(format!("unknown CSV dialect `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParseReport {
    pub records: Vec<AisRecord>,
    /// Rows rejected for invalid coordinates, non-numeric fields or
    /// unparseable timestamps.
    pub dropped: usize,
}

/// Parse an ISO-8601 style timestamp into epoch seconds (UTC assumed when no
/// offset is given). The Danish export's `dd/mm/yyyy HH:MM:SS` is accepted too.
pub fn parse_timestamp(raw: &str) -> Option<i64> {
    let raw = raw.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Some(dt.timestamp());
    }
    const FORMATS: [&str; 4] = [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M:%S%.f",
        "%d/%m/%Y %H:%M:%S",
    ];
    FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(raw, f).ok())
        .map(|dt| dt.and_utc().timestamp())
}

pub fn parse_ais_csv(path: &Path, dialect: Dialect) -> Result<ParseReport> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_ais_reader(file, dialect)
}

pub fn parse_ais_reader<R: Read>(reader: R, dialect: Dialect) -> Result<ParseReport> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = match rdr.headers() {
        Ok(h) => h.clone(),
        Err(e) => {
            return Err(Error::Format {
                what: "AIS CSV header",
                detail: e.to_string(),
            })
        }
    };
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Ok(ParseReport::default());
    }

    let cols = dialect.columns();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("missing required column `{name}`")))
    };
    let idx_mmsi = find(cols.mmsi)?;
    let idx_time = find(cols.time)?;
    let idx_lat = find(cols.lat)?;
    let idx_lon = find(cols.lon)?;
    let idx_sog = find(cols.sog)?;
    let idx_cog = find(cols.cog)?;

    let mut report = ParseReport::default();
    for row in rdr.records() {
        let Ok(row) = row else {
            report.dropped += 1;
            continue;
        };
        let num = |i: usize| row.get(i).and_then(|s| s.parse::<f64>().ok());
        let parsed = (|| {
            let vessel_id = row.get(idx_mmsi)?.to_string();
            if vessel_id.is_empty() {
                return None;
            }
            Some(AisRecord {
                vessel_id,
                timestamp: parse_timestamp(row.get(idx_time)?)?,
                lon: num(idx_lon)?,
                lat: num(idx_lat)?,
                sog: num(idx_sog)?,
                cog: num(idx_cog)?,
            })
        })();
        match parsed {
            Some(rec) if rec.is_valid() => report.records.push(rec),
            _ => report.dropped += 1,
        }
    }
    sort_records(&mut report.records);
    Ok(report)
}

/// Canonical order: vessel, then time. Ties fall back to the remaining fields
/// so the result is independent of input row order.
pub(crate) fn sort_records(records: &mut [AisRecord]) {
    records.sort_by(|a, b| {
        a.vessel_id
            .cmp(&b.vessel_id)
            .then(a.timestamp.cmp(&b.timestamp))
            .then(a.lon.total_cmp(&b.lon))
            .then(a.lat.total_cmp(&b.lat))
            .then(a.sog.total_cmp(&b.sog))
            .then(a.cog.total_cmp(&b.cog))
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    const US_HEADER: &str = "MMSI,BaseDateTime,LAT,LON,SOG,COG,Heading,VesselName\n";

    fn parse(body: &str) -> ParseReport {
        parse_ais_reader(body.as_bytes(), Dialect::UsCoast).unwrap()
    }

    #[test]
    fn single_valid_row_passes_through() {
        let r = parse(&format!(
            "{US_HEADER}367000000,2023-12-25T00:00:00,40.1,-73.9,10.5,90.0,91,ABC\n"
        ));
        assert_eq!(r.dropped, 0);
        assert_eq!(r.records.len(), 1);
        let rec = &r.records[0];
        assert_eq!(rec.vessel_id, "367000000");
        assert_eq!(rec.lat, 40.1);
        assert_eq!(rec.lon, -73.9);
        assert_eq!(rec.timestamp, 1_703_462_400);
    }

    #[test]
    fn invalid_rows_are_dropped_and_counted() {
        let r = parse(&format!(
            "{US_HEADER}1,2023-12-25T00:00:00,91.2,-73.9,1,1,0,x\n\
             2,2023-12-25T00:00:00,40,abc,1,1,0,x\n\
             3,not-a-time,40,-73,1,1,0,x\n\
             4,2023-12-25T00:00:00,40,-73,1,360,0,x\n\
             5,2023-12-25T00:03:00,40,-73,1,359.9,0,x\n"
        ));
        assert_eq!(r.dropped, 4);
        assert_eq!(r.records.len(), 1);
    }

    #[test]
    fn missing_column_is_named() {
        let err = parse_ais_reader("MMSI,BaseDateTime,LAT,SOG,COG\n".as_bytes(), Dialect::UsCoast)
            .unwrap_err();
        assert!(err.is_config());
        assert!(err.to_string().contains("`LON`"), "{err}");
    }

    #[test]
    fn empty_file_is_empty_sequence() {
        let r = parse_ais_reader("".as_bytes(), Dialect::Danish).unwrap();
        assert!(r.records.is_empty());
        assert_eq!(r.dropped, 0);
    }

    #[test]
    fn danish_dialect_and_date_format() {
        let body = "# Timestamp,Type of mobile,MMSI,Latitude,Longitude,Navigational status,ROT,SOG,COG\n\
                    16/02/2024 00:00:01,Class A,219000001,55.5,10.1,Under way,0,12.0,45.0\n";
        let r = parse_ais_reader(body.as_bytes(), Dialect::Danish).unwrap();
        assert_eq!(r.records.len(), 1);
        assert_eq!(r.records[0].timestamp, 1_708_041_601);
        assert_eq!(r.records[0].lon, 10.1);
    }

    #[test]
    fn shuffled_rows_sorted_for_every_permutation() {
        let rows = [
            "222,2023-12-25T00:10:00,40.2,-73.2,1,1,0,x",
            "111,2023-12-25T00:05:00,40.0,-73.0,1,1,0,x",
            "111,2023-12-25T00:00:00,40.1,-73.1,1,1,0,x",
        ];
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let mut first: Option<Vec<AisRecord>> = None;
        for p in perms {
            let body: String = std::iter::once(US_HEADER.to_string())
                .chain(p.iter().map(|&i| format!("{}\n", rows[i])))
                .collect();
            let recs = parse(&body).records;
            let keys: Vec<(&str, i64)> =
                recs.iter().map(|r| (r.vessel_id.as_str(), r.timestamp)).collect();
            assert_eq!(
                keys,
                vec![("111", 1_703_462_400), ("111", 1_703_462_700), ("222", 1_703_463_000)]
            );
            match &first {
                None => first = Some(recs),
                Some(f) => assert_eq!(f, &recs),
            }
        }
    }

    #[test]
    fn dialect_names() {
        assert_eq!("us_coast".parse::<Dialect>().unwrap(), Dialect::UsCoast);
        assert_eq!("Danish".parse::<Dialect>().unwrap(), Dialect::Danish);
        assert!("bogus".parse::<Dialect>().is_err());
    }
}
