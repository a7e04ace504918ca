use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use super::{Domain, Split, TrackletRecord};
use crate::error::{Error, Result};

pub const MANIFEST_HEADER: [&str; 9] = [
    "tracklet_index",
    "person_id",
    "camera_id",
    "domain",
    "altitude_m",
    "distance_m",
    "angle_deg",
    "split",
    "has_flip",
];

pub fn parse_manifest(path: impl AsRef<Path>) -> Result<Vec<TrackletRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_manifest_from(file)
}

/// Columns are located by header name, so their order is free.
pub fn parse_manifest_from<R: Read>(reader: R) -> Result<Vec<TrackletRecord>> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = csv.headers()?.clone();
    let mut columns = [0usize; 9];
    for (slot, name) in columns.iter_mut().zip(MANIFEST_HEADER) {
        *slot = header
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or(Error::MissingColumn(name))?;
    }

    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for row in csv.records() {
        let row = row?;
        let field = |i: usize| row.get(columns[i]).unwrap_or("");
        let record = TrackletRecord {
            tracklet_index: parse_num(MANIFEST_HEADER[0], field(0))?,
            person_id: parse_num(MANIFEST_HEADER[1], field(1))?,
            camera_id: parse_num(MANIFEST_HEADER[2], field(2))?,
            domain: Domain::parse(field(3))?,
            altitude_m: parse_nonneg(MANIFEST_HEADER[4], field(4))?,
            distance_m: parse_nonneg(MANIFEST_HEADER[5], field(5))?,
            angle_deg: parse_angle(field(6))?,
            split: Split::parse(field(7))?,
            has_flip: parse_bool(field(8))?,
        };
        if !seen.insert(record.tracklet_index) {
            return Err(Error::DuplicateIndex(record.tracklet_index));
        }
        records.push(record);
    }
    Ok(records)
}

pub fn write_manifest<W: Write>(writer: W, records: &[TrackletRecord]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(MANIFEST_HEADER)?;
    for r in records {
        csv.write_record([
            r.tracklet_index.to_string(),
            r.person_id.to_string(),
            r.camera_id.to_string(),
            r.domain.as_str().to_string(),
            r.altitude_m.to_string(),
            r.distance_m.to_string(),
            r.angle_deg.to_string(),
            r.split.as_str().to_string(),
            u8::from(r.has_flip).to_string(),
        ])?;
    }
    csv.flush().map_err(|e| Error::io("<manifest>", e))
}

fn parse_num<T: std::str::FromStr>(column: &'static str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::InvalidField {
        column,
        value: value.to_string(),
    })
}

fn parse_nonneg(column: &'static str, value: &str) -> Result<f64> {
    let v: f64 = parse_num(column, value)?;
    if !v.is_finite() || v < 0.0 {
        return Err(Error::InvalidField {
            column,
            value: value.to_string(),
        });
    }
    Ok(v)
}

fn parse_angle(value: &str) -> Result<f64> {
    let v = parse_nonneg("angle_deg", value)?;
    if v > 90.0 {
        return Err(Error::InvalidField {
            column: "angle_deg",
            value: value.to_string(),
        });
    }
    Ok(v)
}

fn parse_bool(value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Ok(true),
        "0" | "false" | "no" | "" => Ok(false),
        _ => Err(Error::InvalidField {
            column: "has_flip",
            value: value.to_string(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "tracklet_index,person_id,camera_id,domain,altitude_m,distance_m,angle_deg,split,has_flip\n";

    fn parse(body: &str) -> Result<Vec<TrackletRecord>> {
        parse_manifest_from(format!("{HEADER}{body}").as_bytes())
    }

    #[test]
    fn direct_field_mapping() {
        let recs = parse("0,12,3,aerial,40.0,60.0,45.0,query,1\n").unwrap();
        assert_eq!(
            recs[0],
            TrackletRecord {
                tracklet_index: 0,
                person_id: 12,
                camera_id: 3,
                domain: Domain::Aerial,
                split: Split::Query,
                altitude_m: 40.0,
                distance_m: 60.0,
                angle_deg: 45.0,
                has_flip: true,
            }
        );
    }

    #[test]
    fn enum_tokens_case_insensitive() {
        let recs = parse("0,1,0,AERIAL,5,10,0,Gallery,0\n").unwrap();
        assert_eq!(recs[0].domain, Domain::Aerial);
        assert_eq!(recs[0].split, Split::Gallery);
    }

    #[test]
    fn duplicate_index() {
        let err = parse("5,1,0,aerial,5,10,0,train,0\n5,2,0,ground,5,10,0,train,0\n").unwrap_err();
        assert!(matches!(err, Error::DuplicateIndex(5)));
    }

    #[test]
    fn bad_enums() {
        assert!(matches!(
            parse("0,1,0,space,5,10,0,train,0\n"),
            Err(Error::UnknownDomain(_))
        ));
        assert!(matches!(
            parse("0,1,0,ground,5,10,0,val,0\n"),
            Err(Error::UnknownSplit(_))
        ));
    }

    #[test]
    fn missing_column() {
        let err = parse_manifest_from("tracklet_index,person_id\n0,1\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::MissingColumn("camera_id")));
    }

    #[test]
    fn write_then_parse() {
        let recs = parse("0,1,0,aerial,5.5,10,30,train,0\n1,2,4,ground,7,12.25,90,query,1\n").unwrap();
        let mut out = Vec::new();
        write_manifest(&mut out, &recs).unwrap();
        assert_eq!(parse_manifest_from(out.as_slice()).unwrap(), recs);
    }
}
