//! Whole-run helpers shared by the command-line tool and the tests: plain
//! runs, determinism checks and the synthetic benchmark.

use std::fmt::Write as _;
use std::time::Instant;

use crate::dsl::{load_with, LoadError};
use crate::world::{first_divergence, Keep, RunConfig, RuntimeError, TraceLevel, World};

/// Steps `world` for `ticks` ticks or until the first runtime error.
pub fn run(world: &mut World, ticks: u64) -> Result<(), RuntimeError> {
    world.run(ticks)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Divergence {
    /// The run that disagreed with the first one.
    pub run: usize,
    pub tick: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Replay {
    pub hashes: Vec<u64>,
    pub divergence: Option<Divergence>,
}

/// Runs the scenario `runs` times and compares the per-tick trace hashes.
/// `chaos_tick` perturbs the last run at that tick (harness self-test).
pub fn replay_check(src: &str, tweak: &dyn Fn(&mut RunConfig), runs: usize, chaos_tick: Option<u64>) -> Result<Replay, LoadError> {
    let mut first: Option<Vec<u64>> = None;
    let mut hashes = Vec::new();
    let mut divergence = None;
    for r in 0..runs.max(1) {
        let mut w = load_with(src, tweak)?.world;
        w.trace.keep = Keep::None;
        if r + 1 == runs && r > 0 {
            w.chaos_tick = chaos_tick;
        }
        let ticks = w.config.ticks;
        // A runtime error ends the run; the trace up to it is still compared.
        let _ = w.run(ticks);
        hashes.push(w.trace.hash());
        let prefix = w.trace.prefix_hashes().to_vec();
        match &first {
            None => first = Some(prefix),
            Some(base) => {
                if divergence.is_none() {
                    if let Some(t) = first_divergence(base, &prefix) {
                        divergence = Some(Divergence { run: r, tick: t as u64 });
                    }
                }
            }
        }
    }
    Ok(Replay { hashes, divergence })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// Wander and idle trees of about twenty nodes.
    Simple,
    /// Pub guests, innkeepers and waitresses with injected behaviors.
    Complex,
}

impl Profile {
    pub fn parse(s: &str) -> Option<Profile> {
        match s {
            "simple" => Some(Profile::Simple),
            "complex" => Some(Profile::Complex),
            _ => None,
        }
    }
}

const SIMPLE_TEMPLATES: &str = "templates
  area field
    behavior graze max=1000
      (seq (act wander dur=2) (act idle dur=2))

  npc walker
    attr energy=6 sociable=1
    ambient
      (loop (sel (seq (cond chance 30) (act wander dur=2) (act idle dur=3))
                 (seq (cond is-day)
                      (sel (seq (cond attr-ge energy 5) (act wander dur=2))
                           (act idle dur=2)))
                 (seq (cond has-attr sociable) (invert (cond chance 50)) (act gesture))
                 (seq (cond attr-lt energy 3) (act sit-idle dur=4))
                 (act idle dur=4)))
";

const COMPLEX_TEMPLATES: &str = "templates
  object stool
    behavior sit drop=on-completion
      (seq (move $this-sa)
           (act sit-down)
           (act note event=order-placed)
           (send $pub order kind=request-change)
           (wait drink-served timeout=300)
           (act note event=order-delivered)
           (sel (seq (cond chance 50) (act toast) (act drink dur=8))
                (act drink dur=12))
           (act sit-idle dur=4)
           :cleanup (act stand-up))

  object hearth
    behavior warm-up max=3
      (seq (move $this-sa) (act idle dur=5) (act gesture))

  area pub
    link stools kind=object min=1
    link hearth kind=object min=1
    behavior drink max=6 enabled=false
      (seq (act set-var name=pub value=$this-sa)
           (request link:stools name=sit))
    behavior warm max=6
      (request link:hearth name=warm-up)
    behavior tend-bar
      (loop (sel (seq (wait pour timeout=4)
                      (act pour-drink dur=5)
                      (send source poured guest=$guest))
                 (act idle dur=2)))
    behavior serve max=2
      (loop (sel (seq (wait deliver timeout=4)
                      (move $bar)
                      (act serve-drink)
                      (move $guest)
                      (send $guest drink-served))
                 (act idle dur=2)))
    brain
      (par all
        (loop (sel (seq (cond holders-ge tend-bar 1) (enable drink))
                   (disable drink)))
        (loop (seq (wait order) (send holders:tend-bar pour guest=$sender)))
        (loop (seq (wait poured) (send holders:serve deliver guest=$guest))))
    on adopt
      (act note event=welcome guest=$npc behavior=$behavior)
    on drop
      (act note event=farewell guest=$npc behavior=$behavior)

  npc guest
    attr sociable=1 thirst=3 wealth=modest
    ambient
      (subscribe
        (loop (sel (seq (cond attr-ge thirst 2)
                        (cond chance 60)
                        (sel (request area name=drink)
                             (seq (act gesture) (act idle dur=2))))
                   (seq (cond chance 40)
                        (sel (request area name=warm)
                             (act wander dur=2)))
                   (seq (cond is-night)
                        (cond chance 20)
                        (act sleep dur=10))
                   (seq (cond has-attr sociable)
                        (cond chance 30)
                        (sel (seq (cond wealth-is rich) (act toast))
                             (seq (act gesture) (act idle dur=1))))
                   (seq (cond chance 50) (repeat n=2 (act wander dur=2)))
                   (act idle dur=3))))
    combat
      (loop (act duck dur=3))

  npc innkeeper
    ambient
      (loop (sel (request area name=tend-bar) (act idle dur=2)))

  npc waitress
    ambient
      (seq (act set-var name=bar value=@bar)
           (loop (sel (request area name=serve) (act idle dur=2))))

  situation small-talk weight=2 cooldown=20 area=pub
    role opener
      when has-attr sociable
      (seq (act greet) (act chat dur=8))
    role listener
      when has-attr sociable
      (seq (act face-partner) (act chat dur=8))
";

/// Text of a synthetic scenario with `npcs` NPCs of the given profile.
pub fn bench_scenario(npcs: usize, profile: Profile, seed: u64, ticks: u64) -> String {
    let mut s = String::new();
    match profile {
        Profile::Simple => {
            let side = ((npcs as f64).sqrt().ceil() as i32).max(4) * 2;
            s.push_str(SIMPLE_TEMPLATES);
            let _ = write!(s, "\nworld\n  grid {side} {side}\n  area field-1 template=field bounds=0,0,{},{}\n", side - 1, side - 1);
            s.push_str("\nnpcs\n");
            for i in 0..npcs {
                let (x, y) = ((i as i32 * 2) % side, (i as i32 * 2) / side * 2 % side);
                let _ = writeln!(s, "  npc w{i} template=walker at={x},{y}");
            }
        }
        Profile::Complex => {
            let blocks = npcs.div_ceil(6).max(1);
            s.push_str(COMPLEX_TEMPLATES);
            let _ = write!(s, "\nworld\n  grid {} 8\n", blocks * 10);
            for b in 0..blocks {
                let x = b as i32 * 10;
                let _ = writeln!(s, "  area pub-{b} template=pub bounds={x},0,{},7", x + 7);
                for k in 0..3 {
                    let _ = writeln!(s, "  object stool-{b}-{k} template=stool at={},2", x + 2 + k);
                }
                let _ = writeln!(s, "  object hearth-{b} template=hearth at={},6", x + 1);
                let _ = writeln!(s, "  link pub-{b} stools stool-{b}-0 stool-{b}-1 stool-{b}-2");
                let _ = writeln!(s, "  link pub-{b} hearth hearth-{b}");
            }
            s.push_str("\nnpcs\n");
            for i in 0..npcs {
                let (b, k) = (i / 6, i % 6);
                let x = b as i32 * 10;
                let line = match k {
                    0 => format!("  npc keeper-{b} template=innkeeper at={},1", x + 1),
                    1 => format!("  npc server-{b} template=waitress at={},4 bar={},2", x + 2, x + 1),
                    g => format!("  npc guest-{b}-{g} template=guest at={},{}", x + g as i32, 3 + (g as i32 % 3)),
                };
                s.push_str(&line);
                s.push('\n');
            }
        }
    }
    let _ = write!(s, "\nrun\n  seed {seed}\n  ticks {ticks}\n  trace-level off\n");
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct Timing {
    pub npcs: usize,
    pub ticks: u64,
    pub mean_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
    pub node_evals: u64,
}

/// Wall time per tick of a generated scenario, tracing off.
pub fn bench(npcs: usize, profile: Profile, ticks: u64, seed: u64) -> Result<Timing, LoadError> {
    let src = bench_scenario(npcs, profile, seed, ticks);
    let mut w = load_with(&src, &|_| {})?.world;
    w.trace.level = TraceLevel::Off;
    let mut samples = Vec::with_capacity(ticks as usize);
    for _ in 0..ticks {
        let t0 = Instant::now();
        if w.step().is_err() {
            break;
        }
        samples.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    let n = samples.len().max(1) as f64;
    let mean_ms = samples.iter().sum::<f64>() / n;
    let mut sorted = samples.clone();
    sorted.sort_by(f64::total_cmp);
    let pick = |q: f64| sorted.get(((sorted.len() as f64 * q).ceil() as usize).saturating_sub(1)).copied().unwrap_or(0.0);
    Ok(Timing { npcs, ticks: samples.len() as u64, mean_ms, p99_ms: pick(0.99), max_ms: pick(1.0), node_evals: w.stats.node_evals })
}
