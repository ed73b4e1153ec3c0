use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{invalid, io_err, Error, Result};
use crate::model::Scenario;

/// Mean Earth radius used for the equirectangular projection of lat/lon sites.
const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Parses a scenario from JSON text. Unknown keys are rejected with their
/// full key path.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    scenario.validate()?;
    Ok(scenario)
}

/// Loads a scenario file; relative CSV paths inside it are resolved against
/// the file's directory.
pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut scenario = parse_scenario(&text)?;
    let base = path.parent().unwrap_or(Path::new(""));
    let resolve = |p: &mut Option<String>| {
        if let Some(s) = p.as_mut() {
            let pb = PathBuf::from(&*s);
            if pb.is_relative() {
                *s = base.join(pb).display().to_string();
            }
        }
    };
    resolve(&mut scenario.deployment.csv_path);
    resolve(&mut scenario.incumbents.csv_path);
    Ok(scenario)
}

/// Site coordinates read from a CSV file, in meters.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SiteTable {
    pub ids: Vec<String>,
    pub positions: Vec<[f64; 2]>,
    pub warnings: Vec<String>,
}

impl SiteTable {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Smallest `[width, height]` (from the origin) that contains every site.
    pub fn extent(&self) -> [f64; 2] {
        self.positions
            .iter()
            .fold([0.0, 0.0], |e, p| [e[0].max(p[0]), e[1].max(p[1])])
    }
}

/// Reads access-point (or BS) sites. Accepted headers: `id,x_m,y_m` (extra
/// columns ignored) or `id,lat,lon`; geographic coordinates are projected
/// to meters east/north of the south-west corner of the set. An empty file
/// yields an empty table with a warning.
pub fn ingest_ap_csv(path: &Path) -> Result<SiteTable> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut table = SiteTable::default();
    if text.trim().is_empty() {
        table.warnings.push(format!("{}: empty file, no sites loaded", path.display()));
        return Ok(table);
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let file = path.display().to_string();
    let id_col = col("id").ok_or_else(|| Error::Parse {
        file: file.clone(),
        line: 1,
        message: "missing `id` column".into(),
    })?;
    let (a, b, geographic) = match (col("x_m"), col("y_m"), col("lat"), col("lon")) {
        (Some(x), Some(y), _, _) => (x, y, false),
        (_, _, Some(lat), Some(lon)) => (lat, lon, true),
        _ => {
            return Err(Error::Parse {
                file,
                line: 1,
                message: "expected columns `x_m,y_m` or `lat,lon`".into(),
            })
        }
    };
    let mut raw = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let num = |i: usize, what: &str| -> Result<f64> {
            rec.get(i)
                .and_then(|v| v.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    file: file.clone(),
                    line,
                    message: format!("non-numeric {what} `{}`", rec.get(i).unwrap_or("")),
                })
        };
        let u = num(a, headers.get(a).unwrap_or("coordinate"))?;
        let v = num(b, headers.get(b).unwrap_or("coordinate"))?;
        if geographic && !((-90.0..=90.0).contains(&u) && (-180.0..=180.0).contains(&v)) {
            return Err(Error::Parse {
                file,
                line,
                message: "latitude/longitude out of range".into(),
            });
        }
        table.ids.push(rec.get(id_col).unwrap_or("").to_string());
        raw.push([u, v]);
    }
    if geographic && !raw.is_empty() {
        let lat0 = raw.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
        let lon0 = raw.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
        let lat_mid = raw.iter().map(|p| p[0]).sum::<f64>() / raw.len() as f64;
        let k = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
        table.positions = raw
            .iter()
            .map(|p| [k * (p[1] - lon0) * lat_mid.to_radians().cos(), k * (p[0] - lat0)])
            .collect();
    } else {
        table.positions = raw;
    }
    if table.is_empty() {
        table.warnings.push(format!("{}: no data rows, no sites loaded", path.display()));
    }
    Ok(table)
}

/// Site tables referenced by a scenario, loaded once per run.
#[derive(Debug, Clone, Default)]
pub struct ScenarioInputs {
    pub bs_sites: Option<SiteTable>,
    pub incumbent_sites: Option<SiteTable>,
}

impl ScenarioInputs {
    pub fn load(scenario: &Scenario) -> Result<Self> {
        let bs_sites = match (&scenario.deployment.kind, &scenario.deployment.csv_path) {
            (crate::model::DeploymentKind::Csv, Some(p)) => Some(ingest_ap_csv(Path::new(p))?),
            (crate::model::DeploymentKind::Csv, None) => {
                return Err(invalid("deployment.csv_path is required for csv deployments"))
            }
            _ => None,
        };
        if bs_sites.as_ref().is_some_and(|t| t.is_empty()) {
            return Err(invalid("BS site file has no rows"));
        }
        let incumbent_sites = match &scenario.incumbents.csv_path {
            Some(p) => Some(ingest_ap_csv(Path::new(p))?),
            None => None,
        };
        Ok(ScenarioInputs {
            bs_sites,
            incumbent_sites,
        })
    }
}
