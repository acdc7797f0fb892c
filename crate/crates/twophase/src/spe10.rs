//! SPE10-layout data ingestion: whitespace-separated ASCII values ordered
//! x-fastest, then y, then z. Permeability files hold the kx block, then ky,
//! then kz, in millidarcy; porosity files hold one dimensionless block.
//! The datasets themselves are not shipped; synthetic generators in the same
//! layout cover tests and examples.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rockfluid::RockProps;

pub const MILLIDARCY: f64 = 9.869233e-16;

/// Porosity and diagonal permeability (m^2) for one grid slab.
#[derive(Debug, Clone)]
pub struct RockSlab {
    pub porosity: Vec<f64>,
    pub perm: Vec<[f64; 3]>,
}

fn parse_values(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut values = Vec::with_capacity(expected);
    for (token_idx, token) in text.split_whitespace().enumerate() {
        if values.len() == expected {
            break;
        }
        let v: f64 = token.parse().map_err(|_| Error::Parse {
            path: path.display().to_string(),
            line: token_idx + 1,
            message: format!("token {} (`{token}`) is not a number", token_idx + 1),
        })?;
        values.push(v);
    }
    if values.len() < expected {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 0,
            message: format!("file holds {} values, {expected} required", values.len()),
        });
    }
    Ok(values)
}

fn slab_indices(
    file_dims: (usize, usize, usize),
    origin: (usize, usize, usize),
    extent: (usize, usize, usize),
) -> Result<Vec<usize>> {
    let (fx, fy, fz) = file_dims;
    let (ox, oy, oz) = origin;
    let (nx, ny, nz) = extent;
    if ox + nx > fx || oy + ny > fy || oz + nz > fz {
        return Err(Error::Validation(format!(
            "slab origin ({ox},{oy},{oz}) + extent ({nx},{ny},{nz}) exceeds file dims ({fx},{fy},{fz})"
        )));
    }
    let mut idx = Vec::with_capacity(nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                idx.push(((oz + k) * fy + (oy + j)) * fx + (ox + i));
            }
        }
    }
    Ok(idx)
}

/// Extract a slab of permeability and porosity, converting mD to m^2.
pub fn load_spe10_slab(
    perm_path: &Path,
    poro_path: &Path,
    file_dims: (usize, usize, usize),
    origin: (usize, usize, usize),
    extent: (usize, usize, usize),
) -> Result<RockSlab> {
    let (fx, fy, fz) = file_dims;
    let block = fx * fy * fz;
    let perm_values = parse_values(perm_path, 3 * block)?;
    let poro_values = parse_values(poro_path, block)?;
    let indices = slab_indices(file_dims, origin, extent)?;

    let perm = indices
        .iter()
        .map(|&i| {
            [
                perm_values[i] * MILLIDARCY,
                perm_values[block + i] * MILLIDARCY,
                perm_values[2 * block + i] * MILLIDARCY,
            ]
        })
        .collect();
    let porosity = indices.iter().map(|&i| poro_values[i]).collect();
    Ok(RockSlab { porosity, perm })
}

/// Attach residual saturations to a slab, producing full rock properties.
pub fn slab_to_rock(slab: RockSlab, s_wr: f64, s_nr: f64) -> RockProps {
    RockProps { porosity: slab.porosity, perm: slab.perm, s_wr, s_nr }
}

/// Isotropic lognormal permeability field (m^2): ln K centered on
/// ln(mean) with standard deviation sigma, deterministic per seed.
pub fn lognormal_field(n_cells: usize, mean: f64, sigma: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    (0..n_cells).map(|_| mean * (sigma * normal.sample(&mut rng)).exp()).collect()
}

/// Write a uniform permeability file (mD) in SPE10 layout.
pub fn write_uniform_perm(
    path: &Path,
    dims: (usize, usize, usize),
    value_md: f64,
) -> Result<()> {
    let n = dims.0 * dims.1 * dims.2;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for block in 0..3 {
        let _ = block;
        for i in 0..n {
            if i % 6 == 5 {
                writeln!(f, "{value_md:?}")?;
            } else {
                write!(f, "{value_md:?} ")?;
            }
        }
        writeln!(f)?;
    }
    Ok(())
}

/// Write a lognormal permeability file (mD) in SPE10 layout; kx = ky = kz.
pub fn write_lognormal_perm(
    path: &Path,
    dims: (usize, usize, usize),
    mean_md: f64,
    sigma: f64,
    seed: u64,
) -> Result<()> {
    let n = dims.0 * dims.1 * dims.2;
    let field = lognormal_field(n, mean_md, sigma, seed);
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for _block in 0..3 {
        for (i, v) in field.iter().enumerate() {
            if i % 6 == 5 {
                writeln!(f, "{v:?}")?;
            } else {
                write!(f, "{v:?} ")?;
            }
        }
        writeln!(f)?;
    }
    Ok(())
}

/// Write a uniform porosity file in SPE10 layout.
pub fn write_uniform_poro(path: &Path, dims: (usize, usize, usize), value: f64) -> Result<()> {
    let n = dims.0 * dims.1 * dims.2;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for i in 0..n {
        if i % 6 == 5 {
            writeln!(f, "{value:?}")?;
        } else {
            write!(f, "{value:?} ")?;
        }
    }
    writeln!(f)?;
    Ok(())
}
