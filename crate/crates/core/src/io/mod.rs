//! File formats: PLY clouds and OBJ/OFF meshes.

mod mesh;
mod ply;

pub use mesh::{load_mesh, load_obj, load_off, write_obj, TriMesh};
pub use ply::{read_ply, write_ply_ascii, write_ply_binary};
