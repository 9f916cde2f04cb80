//! Seeded synthetic package histories for fixtures, tests and benchmarks.

use rand::Rng;

use super::stream;
use crate::ingest::{EventAction, PackageEvent};

const NAMES: &[&str] = &[
    "openssh",
    "bzr",
    "zsh",
    "bash",
    "coreutils",
    "glibc",
    "linux",
    "systemd",
    "openssl",
    "curl",
    "python",
    "python-requests",
    "python-numpy",
    "python-six",
    "pypy3",
    "cython",
    "pyqt5",
    "python-yaml",
    "perl",
    "perl-json",
    "perl-dbi",
    "perl-libwww",
    "perl-yaml",
    "perl-uri",
    "ruby",
    "rbenv",
    "ruby-rake",
    "rb-inotify",
    "ruby-bundler",
    "rbutils",
    "falkon",
    "falcon",
    "fal-tools",
    "kfalcon",
    "debianutils",
    "gentoo-syntax",
    "fedora-fs",
    "ubuntu-font",
    "slackpkg",
    "manjaro-tools",
    "knoppix-theme",
    "gnome-shell",
    "vim",
    "emacs",
    "git",
    "mercurial",
    "nginx",
    "apache",
    "postgresql",
    "sqlite",
    "gcc",
    "clang",
    "llvm",
    "rust",
    "go",
    "nodejs",
    "yarn",
    "firefox",
    "chromium",
    "libreoffice",
];

const LICENSES: &[&str] = &["GPL", "LGPL", "MIT", "BSD", "Apache", "custom:BSD"];

fn recipe_text(name: &str, major: u32, minor: u32, rel: u32, rng: &mut impl Rng) -> String {
    let license = LICENSES[rng.gen_range(0..LICENSES.len())];
    let deps: Vec<&str> = (0..rng.gen_range(0..4)).map(|_| NAMES[rng.gen_range(0..NAMES.len())]).collect();
    let deps = deps.iter().map(|d| format!("'{d}'")).collect::<Vec<_>>().join(" ");
    let sum: String = (0..64).map(|_| char::from_digit(rng.gen_range(0..16), 16).unwrap()).collect();
    format!(
        "# Maintainer: nobody\n\
         pkgname={name}\n\
         pkgver={major}.{minor}\n\
         pkgrel={rel}\n\
         pkgdesc='The {name} package'\n\
         arch=('x86_64')\n\
         url=\"https://example.org/{name}\"\n\
         license=('{license}')\n\
         depends=({deps})\n\
         source=(\"https://example.org/releases/${{pkgname}}-${{pkgver}}.tar.gz\"{{,.sig}})\n\
         sha256sums=('{sum}'\n            'SKIP')\n\
         \n\
         build() {{\n  cd \"$pkgname-$pkgver\"\n  make\n}}\n"
    )
}

/// `count` events starting at `start_ts`, spaced by uniform gaps in
/// `0..=max_gap_seconds`. Repeated names become version updates.
pub fn generate_events(seed: u64, count: usize, start_ts: u64, max_gap_seconds: u64) -> Vec<PackageEvent> {
    let mut rng = stream(seed, "synthetic-events");
    let mut versions: std::collections::BTreeMap<&str, (u32, u32)> = Default::default();
    let mut ts = start_ts;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        if i > 0 {
            ts += rng.gen_range(0..=max_gap_seconds);
        }
        let name = NAMES[rng.gen_range(0..NAMES.len())];
        let (action, (major, minor)) = match versions.get(name) {
            None => (EventAction::Add, (rng.gen_range(1..10), rng.gen_range(0..20))),
            Some((ma, _)) if rng.gen_bool(0.2) => (EventAction::Update, (ma + 1, 0)),
            Some((ma, mi)) => (EventAction::Update, (*ma, mi + 1)),
        };
        versions.insert(name, (major, minor));
        let rel = rng.gen_range(1..3);
        out.push(PackageEvent {
            action,
            publisher_hint: format!("maintainer{}", rng.gen_range(0..25)),
            path: format!("{name}/trunk/PKGBUILD"),
            recipe_text: recipe_text(name, major, minor, rel, &mut rng),
            timestamp: ts,
        });
    }
    out
}

/// `count` distinct packages all submitted at `ts`.
pub fn burst_events(count: usize, ts: u64) -> Vec<PackageEvent> {
    (0..count)
        .map(|i| PackageEvent {
            action: EventAction::Add,
            publisher_hint: "burst".into(),
            path: format!("burst-{i:04}/PKGBUILD"),
            recipe_text: format!("pkgname=burst-{i:04}\npkgver=1.0\npkgrel=1\n"),
            timestamp: ts,
        })
        .collect()
}
