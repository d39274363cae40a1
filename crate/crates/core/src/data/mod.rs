//! Point-cloud ingestion: normalization, quantization, plane-sweep ordering,
//! farthest point sampling, mesh surface sampling and file formats.

mod cloud;
mod dataset;
mod fps;
pub mod io;
mod mesh;

pub use cloud::{
    bin_center, dequantize, normalize_unit_cube, quantize, quantize_sequence, sort_zyx,
    QuantizedPoint, QuantizedPointCloud, RawPointCloud,
};
pub use dataset::{
    load_dataset, read_manifest, write_manifest, Dataset, ManifestEntry, Split, MANIFEST_HEADER,
};
pub use fps::farthest_point_sampling;
pub use mesh::{load_obj, load_off, sample_mesh_surface, TriangleMesh};
