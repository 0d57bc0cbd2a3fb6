use std::path::PathBuf;

use anyhow::Result;
use chrono::DateTime;
use idslice::idcodec::decode;

use crate::config::Context;
use crate::manifest::RunManifest;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// IDs in decimal.
    #[arg(required = true)]
    ids: Vec<u64>,
    /// Layout file (TOML with a `[layout]` table or a top-level `fields` array).
    #[arg(long, value_name = "FILE")]
    layout: Option<PathBuf>,
}

pub fn run(ctx: &Context, args: Args) -> Result<()> {
    let layout = ctx.layout(args.layout.as_deref())?;
    let mut manifest = RunManifest::new(ctx, "decode");
    if let Some(p) = &args.layout {
        manifest.input(p);
    }
    for (i, &id) in args.ids.iter().enumerate() {
        if i > 0 {
            println!();
        }
        let d = decode(id, &layout);
        println!("id {id}");
        println!("{:<16} {:>7} {:>12}", "field", "bits", "value");
        for (span, (name, value)) in layout.fields().iter().zip(&d.field_values) {
            println!("{:<16} {:>7} {:>12}", name, format!("{}-{}", span.start, span.end - 1), value);
        }
        let utc = i64::try_from(d.epoch_seconds)
            .ok()
            .and_then(|s| DateTime::from_timestamp(s, (d.millisecond.min(999) * 1_000_000) as u32));
        match utc {
            Some(t) => println!("created {} ({}.{:03})", t.format("%Y-%m-%d %H:%M:%S%.3f UTC"), d.epoch_seconds, d.millisecond),
            None => println!("created {}.{:03}", d.epoch_seconds, d.millisecond),
        }
        println!("suffix {:#x} ({} bits)", d.suffix_pattern.bits, d.suffix_pattern.width);
        if d.anomalous_ms {
            println!("warning: millisecond field is {} (above 999)", d.millisecond);
        }
    }
    manifest.finish(ctx, None)
}
