//! Multi-part mesh ingestion, SDF supervision sampling and sample archives.

mod archive;
mod instance;
mod sampling;

pub use archive::{read_archive, write_archive, ContactPoint, FreeSamples, SampleArchive, SurfaceSamples, MSDF_MAGIC, MSDF_VERSION};
pub use instance::{load_manifest, normalize_instance, InstanceManifest, LabeledMesh, ManifestObject, MultiObjectInstance, Similarity};
pub use sampling::{
    allocate_counts, build_archive, extract_contact_set, sample_free_space, sample_mesh_points, sample_surface, AreaSampler,
    InstanceQueries,
    SamplingConfig,
};
