use std::fs::OpenOptions;
use std::io::{BufRead, BufWriter, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use idslice::generator::{select_patterns, CandidateStream, Checkpoint, TimeRange};
use idslice::idcodec::IdLayout;
use idslice::inference::PatternCatalog;

use crate::config::{ConfigError, Context, StageContext};
use crate::inputs;
use crate::manifest::{beside, RunManifest};

/// IDs between checkpoint saves.
const CHECKPOINT_EVERY: u64 = 1 << 20;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Epoch seconds `START..END`, end exclusive.
    #[arg(long, value_name = "START..END")]
    range: Option<TimeRange>,
    /// Visit every n-th millisecond only.
    #[arg(long, default_value_t = 1)]
    stride: u64,
    #[arg(long, value_name = "FILE")]
    catalog: PathBuf,
    /// Keep only the best-yielding patterns that capture this share of hits (needs hit counts in the catalog).
    #[arg(long, value_name = "F")]
    target_capture: Option<f64>,
    /// Resume from and save progress to this file; requires --out.
    #[arg(long, value_name = "FILE", requires = "out")]
    checkpoint: Option<PathBuf>,
    /// Newline-delimited decimal IDs; stdout when omitted.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    layout: Option<PathBuf>,
}

/// Range from the flag, else `[generate].range`.
pub fn resolve_range(ctx: &Context, flag: Option<TimeRange>, stride: u64) -> Result<TimeRange> {
    let range = flag
        .or(ctx.section(|c| &c.generate).range)
        .ok_or_else(|| ConfigError::new("no time range: pass --range or set generate.range"))?;
    if stride == 1 {
        return Ok(range);
    }
    TimeRange::with_stride(range.start, range.end, stride).map_err(|e| ConfigError::new(e.to_string()).into())
}

/// Candidate stream over the catalog, restricted to `target_capture` when given.
pub fn stream_for(
    range: TimeRange,
    catalog: &PatternCatalog,
    target_capture: Option<f64>,
    layout: &IdLayout,
) -> Result<CandidateStream> {
    if catalog.width() != layout.suffix_width() {
        return Err(ConfigError::new(format!(
            "catalog patterns are {} bits but the layout suffix is {} bits",
            catalog.width(),
            layout.suffix_width()
        ))
        .into());
    }
    let patterns = match target_capture {
        Some(t) => {
            let sel = select_patterns(catalog, t)?;
            log::info!(
                "{} of {} patterns capture {:.4} of hits at success rate {:.4}",
                sel.patterns.len(),
                catalog.len(),
                sel.expected_capture,
                sel.expected_success_rate
            );
            sel.patterns
        }
        None => catalog.patterns(),
    };
    Ok(CandidateStream::from_patterns(range, patterns, layout)?)
}

/// Cut `path` back to its first `lines` complete lines.
fn truncate_to_lines(path: &Path, lines: u64) -> Result<()> {
    let mut reader = inputs::open(path)?;
    let mut offset = 0u64;
    let mut buf = Vec::new();
    for _ in 0..lines {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf)?;
        if n == 0 || buf.last() != Some(&b'\n') {
            bail!("{} holds fewer IDs than its checkpoint claims", path.display());
        }
        offset += n as u64;
    }
    let f = OpenOptions::new().write(true).open(path)?;
    f.set_len(offset)?;
    Ok(())
}

pub fn run(ctx: &Context, args: Args) -> Result<()> {
    let layout = ctx.layout(args.layout.as_deref())?;
    let range = resolve_range(ctx, args.range, args.stride)?;
    let target = args.target_capture.or(ctx.section(|c| &c.generate).target_capture);
    let mut manifest = RunManifest::new(ctx, "generate");
    manifest.input(&args.catalog);
    let catalog = inputs::read_catalog(&args.catalog)?;
    let mut stream = stream_for(range, &catalog, target, &layout).stage("generate")?;
    let total = stream.total();

    let resumed = match &args.checkpoint {
        Some(cp) if cp.exists() => {
            stream.restore(Checkpoint::load(cp)?).stage("generate")?;
            true
        }
        _ => false,
    };
    let start = stream.position();
    let written = manifest
        .stage("generate", |counts| {
            let mut out: Box<dyn Write> = match (&args.out, resumed) {
                (Some(p), true) => {
                    truncate_to_lines(p, start)?;
                    let mut f = OpenOptions::new().write(true).open(p).with_context(|| format!("opening {}", p.display()))?;
                    f.seek(SeekFrom::End(0))?;
                    Box::new(BufWriter::new(f))
                }
                (p, _) => inputs::output(p.as_deref())?,
            };
            let mut n = 0u64;
            while let Some(id) = stream.next() {
                writeln!(out, "{id}")?;
                n += 1;
                if let Some(cp) = &args.checkpoint {
                    if n % CHECKPOINT_EVERY == 0 {
                        out.flush()?;
                        stream.checkpoint().save(cp)?;
                    }
                }
            }
            out.flush()?;
            if let Some(cp) = &args.checkpoint {
                stream.checkpoint().save(cp)?;
            }
            counts.insert("candidates".into(), total.into());
            counts.insert("written".into(), n.into());
            counts.insert("resumed_at".into(), start.into());
            Ok(n)
        })
        .stage("generate")?;
    log::info!("wrote {written} of {total} candidates");
    if let Some(p) = &args.out {
        manifest.output(p);
    }
    manifest.finish(ctx, args.out.as_deref().map(beside))
}
