"""Run-configuration files: sectioned ``key = value`` plain text.

Layout::

    scenario = green_taylor        # or offset_cylinder
    mu = 0.81                      # deviation-condition parameter
    levels = 4                     # refinement levels (converge command)

    [mesh]
    kind = square                  # square | annulus | file
    n = 10

    [time]
    dt = 0.05
    T = 1.0

    [output]
    dir = out
    plots = true
    snapshots = 0.5, 1.0

    [member.1]
    nu = 0.2
    perturbation = 1e-3

Unknown keys and sections are hard errors; every diagnostic carries the
offending line number.  Numbers accept decimal or scientific notation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

SCENARIOS = ("green_taylor", "offset_cylinder")
MESH_KINDS = ("square", "annulus", "file")


class ConfigError(ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


@dataclass
class MemberConfig:
    nu: float
    perturbation: float = 0.0


@dataclass
class MeshConfig:
    kind: str = "square"
    n: int = 10
    n_outer: int = 80
    n_inner: int = 60
    n_rings: int = 25
    grading: float = 0.85
    path: str = ""


@dataclass
class RunConfig:
    scenario: str
    mesh: MeshConfig
    dt: float
    T: float
    members: list[MemberConfig]
    outdir: str = "out"
    snapshots: list[float] = field(default_factory=list)
    plots: bool = True
    reproducible: bool = True
    diagnostics: str = "basic"
    blowup_threshold: float = 1e6
    mu: float = 0.81
    threads: int = 1
    levels: int = 4

    @property
    def nus(self):
        return [m.nu for m in self.members]

    def echo(self):
        """Canonical text form of the fully resolved configuration."""
        lines = [
            f"scenario = {self.scenario}",
            f"reproducible = {str(self.reproducible).lower()}",
            f"diagnostics = {self.diagnostics}",
            f"blowup_threshold = {self.blowup_threshold!r}",
            f"mu = {self.mu!r}",
            f"threads = {self.threads}",
            f"levels = {self.levels}",
            "[mesh]",
            f"kind = {self.mesh.kind}",
        ]
        if self.mesh.kind == "square":
            lines.append(f"n = {self.mesh.n}")
        elif self.mesh.kind == "annulus":
            lines += [
                f"n_outer = {self.mesh.n_outer}",
                f"n_inner = {self.mesh.n_inner}",
                f"n_rings = {self.mesh.n_rings}",
                f"grading = {self.mesh.grading!r}",
            ]
        else:
            lines.append(f"path = {self.mesh.path}")
        lines += [
            "[time]",
            f"dt = {self.dt!r}",
            f"T = {self.T!r}",
            "[output]",
            f"dir = {self.outdir}",
            f"plots = {str(self.plots).lower()}",
        ]
        if self.snapshots:
            lines.append(
                "snapshots = " + ", ".join(repr(t) for t in self.snapshots)
            )
        for k, m in enumerate(self.members, start=1):
            lines += [f"[member.{k}]", f"nu = {m.nu!r}"]
            if m.perturbation != 0.0:
                lines.append(f"perturbation = {m.perturbation!r}")
        return "\n".join(lines) + "\n"


def _parse_bool(text, line):
    if text.lower() in ("true", "yes", "1", "on"):
        return True
    if text.lower() in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}", line)


def _parse_float(text, line):
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"expected a number, got {text!r}", line) from None


def _parse_int(text, line):
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"expected an integer, got {text!r}", line) from None


_TOP_KEYS = {
    "scenario",
    "reproducible",
    "diagnostics",
    "blowup_threshold",
    "mu",
    "threads",
    "levels",
}
_MESH_KEYS = {"kind", "n", "n_outer", "n_inner", "n_rings", "grading", "path"}
_TIME_KEYS = {"dt", "t"}
_OUTPUT_KEYS = {"dir", "snapshots", "plots"}
_MEMBER_KEYS = {"nu", "perturbation"}


def parse_config(text, name="<config>"):
    """Parse and validate a configuration from text (or an open path's content).

    Raises ConfigError with a line number for unknown keys, type errors and
    constraint violations.
    """
    entries = {"": {}}  # section -> key -> (value text, line)
    section = ""
    for ln, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.split("#", 1)[0].strip()
        if not stripped:
            continue
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ConfigError(f"malformed section header {raw.strip()!r}", ln)
            section = stripped[1:-1].strip()
            base = section.split(".", 1)[0]
            if base not in ("mesh", "time", "output", "member"):
                raise ConfigError(f"unknown section [{section}]", ln)
            if base == "member":
                parts = section.split(".")
                if len(parts) != 2 or not parts[1].isdigit() or int(parts[1]) < 1:
                    raise ConfigError(
                        f"member sections are [member.<k>] with k >= 1, got [{section}]",
                        ln,
                    )
            entries.setdefault(section, {})
            continue
        if "=" not in stripped:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", ln)
        key, value = (s.strip() for s in stripped.split("=", 1))
        if not key:
            raise ConfigError("empty key", ln)
        if key.lower() in entries[section]:
            raise ConfigError(f"duplicate key {key!r} in section [{section}]", ln)
        entries[section][key.lower()] = (value, ln)

    def known(section, allowed):
        for key, (_, ln) in entries.get(section, {}).items():
            if key not in allowed:
                raise ConfigError(
                    f"unknown key {key!r} in section [{section or 'top level'}]", ln
                )

    known("", _TOP_KEYS)
    known("mesh", _MESH_KEYS)
    known("time", _TIME_KEYS)
    known("output", _OUTPUT_KEYS)

    def get(section, key, default=None):
        item = entries.get(section, {}).get(key)
        return item if item is not None else (default, None)

    scenario, ln = get("", "scenario")
    if scenario is None:
        raise ConfigError("missing required key 'scenario'")
    if scenario not in SCENARIOS:
        raise ConfigError(
            f"unknown scenario {scenario!r}; available: {', '.join(SCENARIOS)}", ln
        )

    mesh = MeshConfig()
    kind, ln = get("mesh", "kind", "square" if scenario == "green_taylor" else "annulus")
    if kind not in MESH_KINDS:
        raise ConfigError(f"mesh kind must be one of {MESH_KINDS}, got {kind!r}", ln)
    mesh.kind = kind
    for key, caster, attr in (
        ("n", _parse_int, "n"),
        ("n_outer", _parse_int, "n_outer"),
        ("n_inner", _parse_int, "n_inner"),
        ("n_rings", _parse_int, "n_rings"),
        ("grading", _parse_float, "grading"),
    ):
        value, ln = get("mesh", key)
        if value is not None:
            setattr(mesh, attr, caster(value, ln))
    value, _ = get("mesh", "path")
    if value is not None:
        mesh.path = value
    if mesh.kind == "file" and not mesh.path:
        raise ConfigError("mesh kind 'file' requires a 'path' key")
    if mesh.kind == "square" and mesh.n < 1:
        _, ln = get("mesh", "n")
        raise ConfigError(f"mesh n must be >= 1, got {mesh.n}", ln)

    value, ln = get("time", "dt")
    if value is None:
        raise ConfigError("missing required key 'dt' in [time]")
    dt = _parse_float(value, ln)
    if not dt > 0.0:
        raise ConfigError(f"dt must be positive, got {dt}", ln)
    value, ln = get("time", "t")
    if value is None:
        raise ConfigError("missing required key 'T' in [time]")
    T = _parse_float(value, ln)
    if not T >= dt:
        raise ConfigError(f"T must be >= dt, got T={T}, dt={dt}", ln)

    members = []
    member_sections = sorted(
        (s for s in entries if s.startswith("member.")),
        key=lambda s: int(s.split(".")[1]),
    )
    if not member_sections:
        raise ConfigError("at least one [member.<k>] section is required")
    expected = [f"member.{k}" for k in range(1, len(member_sections) + 1)]
    if member_sections != expected:
        raise ConfigError(
            f"member sections must be numbered 1..J without gaps, got {member_sections}"
        )
    for sec in member_sections:
        known(sec, _MEMBER_KEYS)
        value, ln = get(sec, "nu")
        if value is None:
            raise ConfigError(f"missing 'nu' in [{sec}]")
        nu = _parse_float(value, ln)
        if not nu > 0.0:
            raise ConfigError(f"nu must be positive, got {nu}", ln)
        pert = 0.0
        value, ln = get(sec, "perturbation")
        if value is not None:
            pert = _parse_float(value, ln)
            if scenario != "green_taylor":
                raise ConfigError(
                    "perturbation is only meaningful for the green_taylor scenario",
                    ln,
                )
        members.append(MemberConfig(nu=nu, perturbation=pert))

    cfg = RunConfig(scenario=scenario, mesh=mesh, dt=dt, T=T, members=members)

    value, ln = get("", "reproducible")
    if value is not None:
        cfg.reproducible = _parse_bool(value, ln)
    value, ln = get("", "diagnostics")
    if value is not None:
        if value not in ("basic", "full"):
            raise ConfigError(
                f"diagnostics must be 'basic' or 'full', got {value!r}", ln
            )
        cfg.diagnostics = value
    value, ln = get("", "blowup_threshold")
    if value is not None:
        cfg.blowup_threshold = _parse_float(value, ln)
        if not cfg.blowup_threshold > 0:
            raise ConfigError("blowup_threshold must be positive", ln)
    value, ln = get("", "mu")
    if value is not None:
        cfg.mu = _parse_float(value, ln)
        if not 0.0 <= cfg.mu < 1.0:
            raise ConfigError(f"mu must lie in [0, 1), got {cfg.mu}", ln)
    value, ln = get("", "threads")
    if value is not None:
        cfg.threads = _parse_int(value, ln)
        if cfg.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {cfg.threads}", ln)
    value, ln = get("", "levels")
    if value is not None:
        cfg.levels = _parse_int(value, ln)
        if cfg.levels < 1:
            raise ConfigError(f"levels must be >= 1, got {cfg.levels}", ln)

    value, ln = get("output", "dir")
    if value is not None:
        cfg.outdir = value
    value, ln = get("output", "plots")
    if value is not None:
        cfg.plots = _parse_bool(value, ln)
    value, ln = get("output", "snapshots")
    if value is not None:
        try:
            cfg.snapshots = [float(s) for s in value.split(",") if s.strip()]
        except ValueError:
            raise ConfigError(f"bad snapshot list {value!r}", ln) from None

    return cfg


def parse_config_file(path):
    with open(path) as fh:
        return parse_config(fh.read(), name=str(path))
