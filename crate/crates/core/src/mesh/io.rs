use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FieldStats, GeometrySpec, MeshGraph};
use crate::autodiff::read_u32;
use crate::error::{Error, Result};

const GRAPH_MAGIC: &[u8; 4] = b"FRG1";
const GRAPH_VERSION: u32 = 1;

/// JSON metadata stored next to each graph file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphSidecar {
    pub geometry: GeometrySpec,
    pub stats: Option<FieldStats>,
    pub time: f64,
    pub noise_seed: u64,
}

pub fn write_graph<W: Write>(mut w: W, mesh: &MeshGraph) -> Result<()> {
    let n = mesh.node_count();
    let e = mesh.edge_count();
    w.write_all(GRAPH_MAGIC)?;
    w.write_all(&GRAPH_VERSION.to_le_bytes())?;
    w.write_all(&(n as u32).to_le_bytes())?;
    w.write_all(&(e as u32).to_le_bytes())?;
    let put = |w: &mut W, v: f64| w.write_all(&v.to_le_bytes());
    for p in &mesh.positions {
        for &c in p {
            put(&mut w, c)?;
        }
    }
    for u in &mesh.velocity {
        for &c in u {
            put(&mut w, c)?;
        }
    }
    for &p in &mesh.pressure {
        put(&mut w, p)?;
    }
    w.write_all(&mesh.mask)?;
    for &[i, j] in &mesh.edges {
        w.write_all(&(i as u32).to_le_bytes())?;
        w.write_all(&(j as u32).to_le_bytes())?;
    }
    for a in &mesh.edge_attr {
        for &c in a {
            put(&mut w, c)?;
        }
    }
    Ok(())
}

pub fn read_graph<R: Read>(mut r: R) -> Result<MeshGraph> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != GRAPH_MAGIC {
        return Err(Error::Format("not an FRG1 graph file".into()));
    }
    let version = read_u32(&mut r)?;
    if version != GRAPH_VERSION {
        return Err(Error::Format(format!("unsupported graph version {version}")));
    }
    let n = read_u32(&mut r)? as usize;
    let e = read_u32(&mut r)? as usize;
    let mut f64s = |count: usize| -> Result<Vec<f64>> {
        let mut buf = vec![0u8; count * 8];
        r.read_exact(&mut buf)?;
        Ok(buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    };
    let positions = triples(&f64s(3 * n)?);
    let velocity = triples(&f64s(3 * n)?);
    let pressure = f64s(n)?;
    let mut mask = vec![0u8; n];
    r.read_exact(&mut mask)?;
    let mut edges = Vec::with_capacity(e);
    for _ in 0..e {
        let i = read_u32(&mut r)? as usize;
        let j = read_u32(&mut r)? as usize;
        edges.push([i, j]);
    }
    let mut buf = vec![0u8; 4 * e * 8];
    r.read_exact(&mut buf)?;
    let attr: Vec<f64> = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let edge_attr = attr.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]).collect();
    let mesh = MeshGraph {
        positions,
        velocity,
        pressure,
        mask,
        edges,
        edge_attr,
    };
    mesh.validate()?;
    Ok(mesh)
}

fn triples(v: &[f64]) -> Vec<[f64; 3]> {
    v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

pub fn write_graph_file(path: &Path, mesh: &MeshGraph, sidecar: &GraphSidecar) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_graph(&mut w, mesh)?;
    w.flush()?;
    let side = File::create(path.with_extension("json"))?;
    serde_json::to_writer_pretty(side, sidecar)?;
    Ok(())
}

pub fn read_graph_file(path: &Path) -> Result<(MeshGraph, GraphSidecar)> {
    let f = File::open(path).map_err(|e| Error::MissingArtifact(format!("{}: {e}", path.display())))?;
    let mesh = read_graph(BufReader::new(f))?;
    let side = File::open(path.with_extension("json"))
        .map_err(|e| Error::MissingArtifact(format!("sidecar of {}: {e}", path.display())))?;
    let sidecar = serde_json::from_reader(BufReader::new(side))?;
    Ok((mesh, sidecar))
}
