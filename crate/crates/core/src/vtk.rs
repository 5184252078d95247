//! Legacy VTK structured-points files (ASCII), the only layout this crate writes.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mesh::{FieldUnit, GridFunction, UniformGrid3};

/// Writes one or more fields on the same grid. Values are printed with Rust's
/// shortest round-trip formatting so a reload reproduces them bitwise.
pub fn write_structured_points(path: &Path, title: &str, fields: &[(&str, &GridFunction)]) -> Result<()> {
    let text = render(title, fields)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn render(title: &str, fields: &[(&str, &GridFunction)]) -> Result<String> {
    let Some((_, first)) = fields.first() else {
        return Err(Error::invalid("no fields to export"));
    };
    let grid = *first.grid();
    if fields.iter().any(|(_, f)| *f.grid() != grid) {
        return Err(Error::invalid("exported fields must share one grid"));
    }
    let p = grid.points_per_axis();
    let o = grid.coord(0);
    let h = grid.spacing();
    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\n");
    s.push_str(title.lines().next().unwrap_or("stericpb"));
    s.push('\n');
    s.push_str("ASCII\nDATASET STRUCTURED_POINTS\n");
    let _ = writeln!(s, "DIMENSIONS {p} {p} {p}");
    let _ = writeln!(s, "ORIGIN {o} {o} {o}");
    let _ = writeln!(s, "SPACING {h} {h} {h}");
    let _ = writeln!(s, "POINT_DATA {}", grid.total_points());
    for (name, field) in fields {
        let name: String = name.chars().map(|c| if c.is_whitespace() { '_' } else { c }).collect();
        let _ = writeln!(s, "SCALARS {name} double 1");
        s.push_str("LOOKUP_TABLE default\n");
        for row in field.values().chunks(p) {
            let mut first = true;
            for v in row {
                if !first {
                    s.push(' ');
                }
                first = false;
                let _ = write!(s, "{v:?}");
            }
            s.push('\n');
        }
    }
    Ok(s)
}

/// A structured-points file read back into memory.
#[derive(Debug, Clone)]
pub struct StructuredPoints {
    pub dimensions: [usize; 3],
    pub origin: [f64; 3],
    pub spacing: [f64; 3],
    pub arrays: Vec<(String, Vec<f64>)>,
}

impl StructuredPoints {
    pub fn array(&self, name: &str) -> Option<&[f64]> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    /// Converts one array to a grid function after checking the geometry against `grid`.
    pub fn to_grid_function(&self, name: Option<&str>, grid: UniformGrid3, unit: FieldUnit) -> Result<GridFunction> {
        let p = grid.points_per_axis();
        if self.dimensions != [p, p, p] {
            return Err(Error::Config(format!(
                "field has dimensions {:?}, run grid needs {p}x{p}x{p}",
                self.dimensions
            )));
        }
        let tol = 1e-9 * grid.half_width();
        if self.origin.iter().any(|o| (o - grid.coord(0)).abs() > tol)
            || self.spacing.iter().any(|h| (h - grid.spacing()).abs() > tol)
        {
            return Err(Error::Config(format!(
                "field origin {:?} / spacing {:?} do not match the run grid (origin {}, spacing {})",
                self.origin,
                self.spacing,
                grid.coord(0),
                grid.spacing()
            )));
        }
        let values = match name {
            Some(n) => self.array(n).ok_or_else(|| Error::Config(format!("no scalar array named '{n}'")))?,
            None => self.arrays.first().map(|(_, v)| v.as_slice()).ok_or_else(|| Error::Config("file has no scalar arrays".into()))?,
        };
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Config(format!("non-finite value at index {bad}")));
        }
        GridFunction::from_values(grid, values.to_vec(), unit)
    }
}

pub fn parse_structured_points(text: &str, source_name: &str) -> Result<StructuredPoints> {
    let err = |line: usize, message: String| Error::Parse {
        source_name: source_name.to_string(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.starts_with("# vtk DataFile") => {}
        _ => return Err(err(1, "missing '# vtk DataFile' header".into())),
    }
    lines.next();
    match lines.next() {
        Some((_, l)) if l.trim() == "ASCII" => {}
        _ => return Err(err(3, "only ASCII files are supported".into())),
    }
    let mut dims = None;
    let mut origin = None;
    let mut spacing = None;
    let mut npoints = None;
    let mut arrays = Vec::new();

    let parse3 = |ln: usize, parts: &[&str]| -> Result<[f64; 3]> {
        if parts.len() != 4 {
            return Err(err(ln + 1, format!("expected three values after {}", parts[0])));
        }
        let mut out = [0.0; 3];
        for a in 0..3 {
            out[a] = parts[a + 1].parse().map_err(|_| err(ln + 1, format!("bad number '{}'", parts[a + 1])))?;
        }
        Ok(out)
    };

    while let Some((ln, line)) = lines.next() {
        let parts: Vec<&str> = line.split_whitespace().collect();
        let Some(&key) = parts.first() else { continue };
        match key {
            "DATASET" => {
                if parts.get(1) != Some(&"STRUCTURED_POINTS") {
                    return Err(err(ln + 1, "only STRUCTURED_POINTS datasets are supported".into()));
                }
            }
            "DIMENSIONS" => {
                let d = parse3(ln, &parts)?;
                dims = Some([d[0] as usize, d[1] as usize, d[2] as usize]);
            }
            "ORIGIN" => origin = Some(parse3(ln, &parts)?),
            "SPACING" | "ASPECT_RATIO" => spacing = Some(parse3(ln, &parts)?),
            "POINT_DATA" => {
                npoints = Some(
                    parts
                        .get(1)
                        .and_then(|s| s.parse::<usize>().ok())
                        .ok_or_else(|| err(ln + 1, "bad POINT_DATA count".into()))?,
                );
            }
            "SCALARS" => {
                let name = parts.get(1).ok_or_else(|| err(ln + 1, "SCALARS without a name".into()))?.to_string();
                let count = npoints.ok_or_else(|| err(ln + 1, "SCALARS before POINT_DATA".into()))?;
                let mut values = Vec::with_capacity(count);
                let mut first_data_line = true;
                while values.len() < count {
                    let Some((dl, data)) = lines.next() else {
                        return Err(err(ln + 1, format!("array '{name}' ends after {} of {count} values", values.len())));
                    };
                    if first_data_line && data.trim_start().starts_with("LOOKUP_TABLE") {
                        first_data_line = false;
                        continue;
                    }
                    first_data_line = false;
                    for tok in data.split_whitespace() {
                        let v: f64 = match tok {
                            "nan" | "NaN" => f64::NAN,
                            "inf" => f64::INFINITY,
                            "-inf" => f64::NEG_INFINITY,
                            t => t.parse().map_err(|_| err(dl + 1, format!("bad value '{t}'")))?,
                        };
                        values.push(v);
                    }
                }
                if values.len() != count {
                    return Err(err(ln + 1, format!("array '{name}' has {} values, expected {count}", values.len())));
                }
                arrays.push((name, values));
            }
            _ => {}
        }
    }
    let dimensions = dims.ok_or_else(|| err(0, "missing DIMENSIONS".into()))?;
    let n: usize = dimensions.iter().product();
    if let Some(np) = npoints {
        if np != n {
            return Err(err(0, format!("POINT_DATA {np} does not match DIMENSIONS {dimensions:?}")));
        }
    }
    Ok(StructuredPoints {
        dimensions,
        origin: origin.ok_or_else(|| err(0, "missing ORIGIN".into()))?,
        spacing: spacing.ok_or_else(|| err(0, "missing SPACING".into()))?,
        arrays,
    })
}

pub fn read_structured_points(path: &Path) -> Result<StructuredPoints> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_structured_points(&text, &path.display().to_string())
}
