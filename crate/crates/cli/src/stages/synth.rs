use cofcn_core::patches::{
    generate_synthetic_slide, write_slide_index, LesionClass, LesionSpec, PnStage, SetRole, SlideRef,
    TextureParams,
};
use image::GrayImage;

use super::Ctx;
use crate::workdir::Stage;

fn role_name(role: SetRole) -> &'static str {
    match role {
        SetRole::Support => "support",
        SetRole::Query => "query",
        SetRole::Test => "test",
    }
}

/// Writes annotated synthetic slides and their index into the slide directory.
pub fn run(ctx: &Ctx) -> anyhow::Result<()> {
    let cfg = ctx.cfg;
    let s = &cfg.synthetic;
    let dir = &cfg.paths.slides;
    std::fs::create_dir_all(dir)?;
    ctx.work.begin(Stage::Synth)?;
    let mut slides = Vec::new();
    let mut written = Vec::new();
    for c in cfg.all_centers() {
        let test = cfg.centers.test.contains(&c);
        let texture = if test { cfg.test_texture() } else { TextureParams::default() };
        let mut plan = vec![(SetRole::Support, s.support_slides)];
        plan.push(if test { (SetRole::Test, s.test_slides) } else { (SetRole::Query, s.query_slides) });
        for (role, count) in plan {
            for i in 0..count {
                let id = format!("c{c}_{}{i}", role_name(role));
                let spec = LesionSpec {
                    count: s.lesion_count,
                    radius_range: s.lesion_radius,
                    texture: texture.clone(),
                };
                let slide = generate_synthetic_slide(cfg.stage_seed(&format!("synth/{id}")), (s.width, s.height), &spec)?;
                let image_path = format!("{id}.png");
                let mask_path = format!("{id}_mask.png");
                slide.image.save(dir.join(&image_path))?;
                let mask = GrayImage::from_raw(
                    slide.mask.width as u32,
                    slide.mask.height as u32,
                    slide.mask.data.iter().map(|&v| v * 255).collect(),
                )
                .expect("mask buffer matches its dims");
                mask.save(dir.join(&mask_path))?;
                written.push(dir.join(&image_path));
                written.push(dir.join(&mask_path));
                let lesion = s.lesion_count > 0;
                slides.push(SlideRef {
                    slide_id: id,
                    center_id: c,
                    patient_id: format!("patient_{c:03}_{i}"),
                    node_id: "node_0".into(),
                    lesion_class: if lesion { LesionClass::Macro } else { LesionClass::Negative },
                    pn_stage: if lesion { PnStage::PN1 } else { PnStage::PN0 },
                    set_role: role,
                    image_path,
                    mask_path: Some(mask_path),
                });
            }
        }
    }
    write_slide_index(dir, &slides)?;
    log::info!("synth: {} slides in {}", slides.len(), dir.display());
    ctx.work.finish(Stage::Synth, cfg, cfg.stage_seed("synth"), &written)
}
