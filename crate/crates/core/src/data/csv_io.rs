use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Datelike, NaiveDate};

use super::{convert_gpp, convert_radiation, DataError, PhysicalConstants, Record, SiteDataset, SECONDS_PER_DAY};
use crate::process_model::DriverRecord;

/// Header of the site-day CSV format, in write order.
pub const CSV_COLUMNS: [&str; 9] = [
    "site",
    "date",
    "tair_c",
    "vpd_kpa",
    "par_molm2d",
    "precip_mm",
    "co2_ppm",
    "fapar",
    "gpp_gcm2d",
];

/// How the radiation and GPP columns are to be read.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ConversionProfile {
    /// Columns already hold mol m⁻² d⁻¹ and gC m⁻² d⁻¹.
    #[default]
    Converted,
    /// The radiation column holds global radiation in J cm⁻² d⁻¹ and the GPP
    /// column a daily mean flux in µmol m⁻² s⁻¹.
    Raw(PhysicalConstants),
}

pub fn load_csv(path: impl AsRef<Path>, profile: ConversionProfile) -> Result<Vec<SiteDataset>, DataError> {
    let file = std::fs::File::open(path)?;
    read_csv(file, profile)
}

/// Parses site-day rows; sites are returned in order of first appearance.
/// Lines starting with `#` are skipped.
pub fn read_csv<R: Read>(reader: R, profile: ConversionProfile) -> Result<Vec<SiteDataset>, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut col = [0usize; 9];
    for (k, name) in CSV_COLUMNS.iter().enumerate() {
        col[k] = headers
            .iter()
            .position(|h| h == *name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))?;
    }

    let mut sites: Vec<SiteDataset> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |k: usize| row.get(col[k]).unwrap_or("");
        let num = |k: usize| -> Result<f64, DataError> {
            field(k).parse::<f64>().map_err(|e| DataError::Parse {
                line,
                message: format!("{}: {e}", CSV_COLUMNS[k]),
            })
        };
        let site = field(0).to_string();
        let date = NaiveDate::parse_from_str(field(1), "%Y-%m-%d").map_err(|e| DataError::Parse {
            line,
            message: format!("date {:?}: {e}", field(1)),
        })?;
        let (par, gpp) = match profile {
            ConversionProfile::Converted => (num(4)?, num(8)?),
            ConversionProfile::Raw(c) => (
                convert_radiation(num(4)?, &c).map_err(|e| DataError::Parse {
                    line,
                    message: e.to_string(),
                })?,
                convert_gpp(num(8)?, SECONDS_PER_DAY, &c),
            ),
        };
        let driver = DriverRecord {
            t_air: num(2)?,
            vpd: num(3)?,
            par,
            precip: num(5)?,
            co2: num(6)?,
            fapar: num(7)?,
            doy: date.ordinal() as u16,
        };
        driver.validate().map_err(|e| DataError::Parse {
            line,
            message: e.to_string(),
        })?;
        if !gpp.is_finite() {
            return Err(DataError::Parse {
                line,
                message: "gpp is not finite".into(),
            });
        }
        let slot = *index.entry(site.clone()).or_insert_with(|| {
            sites.push(SiteDataset {
                site_id: site.clone(),
                records: Vec::new(),
            });
            sites.len() - 1
        });
        let records = &mut sites[slot].records;
        if let Some(prev) = records.last() {
            if date == prev.date {
                return Err(DataError::Parse {
                    line,
                    message: format!("duplicate date {date} for site {site}"),
                });
            }
            if date < prev.date {
                return Err(DataError::Parse {
                    line,
                    message: format!("date {date} for site {site} is earlier than {}", prev.date),
                });
            }
        }
        records.push(Record { date, driver, gpp });
    }
    if sites.is_empty() {
        return Err(DataError::Empty);
    }
    Ok(sites)
}

/// Writes sites in the converted-units format.
pub fn write_csv<W: Write>(sites: &[SiteDataset], writer: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_COLUMNS)?;
    for site in sites {
        for r in &site.records {
            let d = &r.driver;
            w.write_record([
                site.site_id.clone(),
                r.date.format("%Y-%m-%d").to_string(),
                d.t_air.to_string(),
                d.vpd.to_string(),
                d.par.to_string(),
                d.precip.to_string(),
                d.co2.to_string(),
                d.fapar.to_string(),
                r.gpp.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
