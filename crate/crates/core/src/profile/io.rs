use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{HcFirst, RowVulnerability, VulnerabilityProfile};
use crate::dram::DeviceGeometry;
use crate::error::IoError;
use crate::oracle::DataPattern;

/// Metadata stored next to the row CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileHeader {
    pub template: Option<String>,
    pub seed: u64,
    pub geometry: DeviceGeometry,
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    bank: usize,
    row: u32,
    hcfirst_36ns: HcFirst,
    hcfirst_500ns: HcFirst,
    hcfirst_2us: HcFirst,
    ber: f64,
    wcdp: DataPattern,
    bin: u8,
}

/// `rows.csv` -> `rows.header.json`.
pub fn header_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("header.json")
}

/// Writes the row CSV at `csv_path` and the JSON header beside it.
pub fn write_profile(profile: &VulnerabilityProfile, csv_path: &Path) -> Result<(), IoError> {
    let file = File::create(csv_path).map_err(|e| IoError::io(csv_path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for (bank, row, v) in profile.iter() {
        w.serialize(Record {
            bank,
            row,
            hcfirst_36ns: v.hcfirst[0],
            hcfirst_500ns: v.hcfirst[1],
            hcfirst_2us: v.hcfirst[2],
            ber: v.ber_at_128k,
            wcdp: v.wcdp,
            bin: v.bin_id,
        })?;
    }
    w.flush().map_err(|e| IoError::io(csv_path, e))?;

    let header = ProfileHeader {
        template: profile.template.clone(),
        seed: profile.seed,
        geometry: profile.geometry,
    };
    let hp = header_path(csv_path);
    let text = serde_json::to_string_pretty(&header)?;
    std::fs::write(&hp, text).map_err(|e| IoError::io(&hp, e))
}

/// Reads a profile written by [`write_profile`]. Every (bank, row) of the
/// header geometry must appear exactly once.
pub fn read_profile(csv_path: &Path) -> Result<VulnerabilityProfile, IoError> {
    let hp = header_path(csv_path);
    let text = std::fs::read_to_string(&hp).map_err(|e| IoError::io(&hp, e))?;
    let header: ProfileHeader = serde_json::from_str(&text)?;
    let geometry = header.geometry;
    let rpb = geometry.rows_per_bank as usize;
    let n = geometry.total_rows();

    let file = File::open(csv_path).map_err(|e| IoError::io(csv_path, e))?;
    let mut slots: Vec<Option<RowVulnerability>> = vec![None; n];
    for rec in csv::Reader::from_reader(file).deserialize() {
        let r: Record = rec?;
        if r.bank >= geometry.total_banks() || r.row as usize >= rpb {
            return Err(IoError::Malformed(format!("bank {} row {} outside geometry", r.bank, r.row)));
        }
        if r.bin >= 16 {
            return Err(IoError::Malformed(format!("bin id {} exceeds 4 bits", r.bin)));
        }
        let slot = &mut slots[r.bank * rpb + r.row as usize];
        if slot.is_some() {
            return Err(IoError::Malformed(format!("duplicate bank {} row {}", r.bank, r.row)));
        }
        *slot = Some(RowVulnerability {
            hcfirst: [r.hcfirst_36ns, r.hcfirst_500ns, r.hcfirst_2us],
            ber_at_128k: r.ber,
            wcdp: r.wcdp,
            bin_id: r.bin,
        });
    }
    let rows = slots
        .into_iter()
        .enumerate()
        .map(|(i, s)| s.ok_or_else(|| IoError::Malformed(format!("missing bank {} row {}", i / rpb, i % rpb))))
        .collect::<Result<_, _>>()?;
    Ok(VulnerabilityProfile { geometry, rows, seed: header.seed, template: header.template })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::{generate_profile, ProfileTemplate};

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let t = ProfileTemplate::preset("H1").unwrap();
        let mut p = generate_profile(&t, DeviceGeometry::desk(2, 64), 3).unwrap();
        p.rows[5].hcfirst = [HcFirst::NONE; 3];
        write_profile(&p, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("bank,row,hcfirst_36ns,hcfirst_500ns,hcfirst_2us,ber,wcdp,bin"));
        assert!(text.contains(",inf,"));
        assert_eq!(read_profile(&path).unwrap(), p);
    }

    #[test]
    fn rejects_missing_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let p = generate_profile(&ProfileTemplate::uniform(1024), DeviceGeometry::desk(1, 4), 0).unwrap();
        write_profile(&p, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let truncated: Vec<&str> = text.lines().take(3).collect();
        std::fs::write(&path, truncated.join("\n")).unwrap();
        assert!(matches!(read_profile(&path), Err(IoError::Malformed(_))));
    }
}
