pub mod convert;
pub mod density;
pub mod evaluate;
pub mod fit;
pub mod synth;

use crate::manifest::LoadedManifest;
use crate::Context;
use anyhow::{Context as _, Result};

fn load_manifest(ctx: &Context) -> Result<LoadedManifest> {
    let path = ctx.manifest.as_ref().context("--manifest is required for this command")?;
    LoadedManifest::load(path)
}
