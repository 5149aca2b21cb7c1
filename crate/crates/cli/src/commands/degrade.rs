use anyhow::Result;
use gmmd_core::degrade::{degrade_cell, DegradationSpec, LEVEL_COUNT};
use gmmd_io::images::degraded_dir;
use rayon::prelude::*;

use super::{dry_run, load_images, require_dir, Ctx};
use crate::output::Artifacts;
use crate::spec::RunSpec;

/// Writes `<out>/<typeId>_<tag>/<level>/<imageId>.png` and
/// `<out>/parameters.csv`.
pub fn run(ctx: &Ctx, spec: &RunSpec) -> Result<()> {
    let refs_dir = RunSpec::require(&spec.refs, "refs")?;
    let types = spec.types()?;
    let out_dir = spec.out_dir();
    let art = Artifacts::new(&out_dir, "degrade", spec);
    require_dir(refs_dir, "reference folder")?;
    let steps = vec![
        format!("load references from {}", refs_dir.display()),
        format!("degrade types {types:?} at levels 1..={LEVEL_COUNT} with seed {}", spec.seed()),
        format!("write PNG tree and parameters.csv under {}", out_dir.display()),
    ];
    if dry_run(ctx, &art, spec, &steps)? {
        return Ok(());
    }

    let refs = load_images(refs_dir, "reference folder")?;
    let named = gmmd_core::anchor::named_refs(&refs);
    let cells: Vec<DegradationSpec> = types
        .iter()
        .flat_map(|&t| (1..=LEVEL_COUNT).map(move |l| DegradationSpec::new(t, l)))
        .collect::<gmmd_core::Result<_>>()?;
    // One cell in memory at a time per worker.
    cells.par_iter().try_for_each(|cell| -> Result<()> {
        let images = degrade_cell(&named, cell, spec.seed())?;
        let dir = degraded_dir(&out_dir, cell);
        for ((id, _), img) in named.iter().zip(&images) {
            gmmd_io::save_png(&dir.join(format!("{id}.png")), img)?;
        }
        Ok(())
    })?;

    let rows: Vec<Vec<String>> = gmmd_core::degrade::parameter_rows()
        .into_iter()
        .filter(|(t, ..)| types.contains(t))
        .map(|(t, tag, name, level, param, value)| {
            vec![
                t.to_string(),
                tag.to_string(),
                name.to_string(),
                level.to_string(),
                param.to_string(),
                crate::output::num(value),
            ]
        })
        .collect();
    art.csv(
        "parameters.csv",
        &["type_id", "kadid_tag", "name", "level", "param", "value"],
        &rows,
    )?;
    art.spec(spec)?;
    println!(
        "wrote {} cells x {} images to {}",
        cells.len(),
        refs.len(),
        out_dir.display()
    );
    Ok(())
}
