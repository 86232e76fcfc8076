//! Wavefront OBJ export for fitted meshes and point clouds.

use std::path::Path;

use nalgebra::DVector;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ObjError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("shape length {got} is not a multiple of 3")]
    BadLength { got: usize },
    #[error("non-finite coordinate at index {index}")]
    NonFinite { index: usize },
    #[error("triangle vertex {index} out of range ({n_vertices} vertices)")]
    TriangleOutOfRange { index: usize, n_vertices: usize },
}

/// Renders a shape as OBJ text: one `v x y z` line per vertex with six
/// decimals, then optional `f a b c` lines with 1-based indices.
pub fn format_obj(shape3d: &DVector<f64>, triangles: Option<&[[usize; 3]]>) -> Result<String, ObjError> {
    if shape3d.len() % 3 != 0 {
        return Err(ObjError::BadLength { got: shape3d.len() });
    }
    if let Some(index) = shape3d.iter().position(|x| !x.is_finite()) {
        return Err(ObjError::NonFinite { index });
    }
    let n_vertices = shape3d.len() / 3;
    let mut out = String::new();
    for v in 0..n_vertices {
        out.push_str(&format!(
            "v {:.6} {:.6} {:.6}\n",
            shape3d[3 * v],
            shape3d[3 * v + 1],
            shape3d[3 * v + 2]
        ));
    }
    if let Some(triangles) = triangles {
        for tri in triangles {
            for &index in tri {
                if index >= n_vertices {
                    return Err(ObjError::TriangleOutOfRange { index, n_vertices });
                }
            }
            out.push_str(&format!("f {} {} {}\n", tri[0] + 1, tri[1] + 1, tri[2] + 1));
        }
    }
    Ok(out)
}

pub fn write_obj(
    shape3d: &DVector<f64>,
    triangles: Option<&[[usize; 3]]>,
    path: impl AsRef<Path>,
) -> Result<(), ObjError> {
    std::fs::write(path, format_obj(shape3d, triangles)?)?;
    Ok(())
}
