"""Module for handling the experiment configuration file."""

import os
from dataclasses import dataclass, field
from pathlib import Path

from tomlkit import load
from tomlkit.exceptions import ParseError

from errors import ConfigError, InvalidArgumentError
from tasks import SynthSpec

OUTPUT_DIR_ENV = "TECU_OUTPUT_DIR"

TASKS = ("l0dl", "lie")
# preset solver names per task; experiment.py maps each onto a solver factory
SOLVER_PRESETS = {
    "l0dl": ("PALM", "iPALM", "BCU", "INV", "TECU", "TECU-PITH", "TECU-3-6"),
    "lie": ("TECU", "TECU-3-5", "PALM", "PAM", "CD"),
}
RULE_KINDS = ("proximal", "prox_linear", "embedded")
OPERATORS = ("admm", "pith", "prox_gradient", "illumination")
SOLVER_PARAMS = ("C", "eta", "k_max", "check_every", "safety", "zeta", "beta", "radius", "smoothing_steps")
RULE_PARAMS = ("kind", "operator", "C", "eta", "k_max", "check_every", "safety", "zeta", "radius", "smoothing_steps")


class ConfigHandler:
    """Class for reading the configuration file."""

    def __init__(self, path_to_config_file="./config.toml") -> None:
        """Initialization function.

        Args:
            path_to_config_file (str, optional): the path to the config file. Defaults to "./config.toml".
        """
        self.configfile_path = Path(path_to_config_file)
        if not self.configfile_path.exists():
            raise ConfigError(f"config file {self.configfile_path} does not exist")
        self.read()

    def __get_contents_on_disk(self):
        with self.configfile_path.open() as fp:
            try:
                return load(fp)
            except ParseError as error:
                raise ConfigError(f"{self.configfile_path}: {error}", line=error.line) from error

    def read(self):
        """Read the on-disk config to in-memory doc."""
        self.__doc = self.__get_contents_on_disk()
        self.experiment = ExperimentConfig(self)

    def get(self, keys: list[str], default=None):
        """Get a value from the config, `default` if any key along the path is missing."""
        val = self.__doc
        for key in list(keys):
            if not hasattr(val, "get") or key not in val:
                return default
            val = val[key]
        return val


def _number(table, key, default, kind, field_path, minimum=None):
    value = table.get(key, default) if table is not None else default
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {value!r}", field=field_path)
    if kind is int and not isinstance(value, int):
        raise ConfigError(f"expected an integer, got {value!r}", field=field_path)
    value = kind(value)
    if minimum is not None and value < minimum:
        raise ConfigError(f"must be at least {minimum}, got {value}", field=field_path)
    return value


@dataclass
class SolverSpec:
    """One solver entry: a named preset or explicit per-block rules, plus parameter overrides."""

    name: str
    preset: str = None
    rule_x: dict = None
    rule_y: dict = None
    params: dict = field(default_factory=dict)


class ExperimentConfig:
    """View of the `[experiment]`, `[instance]` and `[[solvers]]` sections."""

    def __init__(self, confighandler: ConfigHandler):
        experiment = confighandler.get(["experiment"])
        if experiment is None:
            raise ConfigError("missing [experiment] section", field="experiment")
        self.task = str(experiment.get("task", "l0dl"))
        if self.task not in TASKS:
            raise ConfigError(f"unknown task '{self.task}', expected one of {TASKS}", field="experiment.task")
        self.tol = _number(experiment, "tol", 1e-4, float, "experiment.tol")
        if not self.tol > 0:
            raise ConfigError("tol must be positive", field="experiment.tol")
        self.max_outer = _number(experiment, "max_outer", 500, int, "experiment.max_outer", minimum=1)
        self.seeds = [
            _number({"seed": seed}, "seed", None, int, f"experiment.seeds[{i}]")
            for i, seed in enumerate(experiment.get("seeds", [0]))
        ]
        if len(self.seeds) == 0:
            raise ConfigError("at least one seed is required", field="experiment.seeds")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct", field="experiment.seeds")
        self.output_dir = Path(os.environ.get(OUTPUT_DIR_ENV) or experiment.get("output_dir", "results"))
        self.keep_history = bool(experiment.get("keep_history", False))

        instance = confighandler.get(["instance"], {})
        self.read_instance(instance)
        self.solvers = self.read_solvers(confighandler.get(["solvers"], []))

    def read_instance(self, instance):
        if self.task == "l0dl":
            try:
                self.synth = SynthSpec(
                    n=_number(instance, "n", 16, int, "instance.n"),
                    m=_number(instance, "m", 32, int, "instance.m"),
                    p=_number(instance, "p", 200, int, "instance.p"),
                    sparsity=_number(instance, "sparsity", 3, int, "instance.sparsity"),
                    noise_sigma=_number(instance, "noise_sigma", 0.01, float, "instance.noise_sigma"),
                )
            except InvalidArgumentError as error:
                raise ConfigError(str(error), field="instance") from error
            self.lam = _number(instance, "lambda", 0.1, float, "instance.lambda")
            if not self.lam > 0:
                raise ConfigError("lambda must be positive", field="instance.lambda")
        else:
            image = instance.get("image")
            self.image = Path(str(image)) if image else None
            self.size = _number(instance, "size", 32, int, "instance.size", minimum=2)
            self.alpha = _number(instance, "alpha", 0.1, float, "instance.alpha")
            if not self.alpha > 0:
                raise ConfigError("alpha must be positive", field="instance.alpha")
            self.radius = _number(instance, "radius", 2, int, "instance.radius", minimum=0)
            self.gamma = _number(instance, "gamma", 0.45, float, "instance.gamma")

    def read_solvers(self, entries) -> list[SolverSpec]:
        solvers = []
        for i, entry in enumerate(entries):
            path = f"solvers[{i}]"
            name = entry.get("name")
            if not name:
                raise ConfigError("every solver needs a name", field=f"{path}.name")
            name = str(name)
            preset = entry.get("preset", None)
            rule_x, rule_y = entry.get("rule_x"), entry.get("rule_y")
            if rule_x is None and rule_y is None:
                preset = str(preset or name)
                if preset not in SOLVER_PRESETS[self.task]:
                    raise ConfigError(
                        f"unknown preset '{preset}' for task {self.task}, expected one of {SOLVER_PRESETS[self.task]}",
                        field=f"{path}.preset",
                    )
            elif rule_x is None or rule_y is None or preset is not None:
                raise ConfigError("give either a preset or both rule_x and rule_y", field=path)
            else:
                rule_x = self.read_rule(rule_x, f"{path}.rule_x")
                rule_y = self.read_rule(rule_y, f"{path}.rule_y")
            params = {}
            for key, value in entry.items():
                if key in ("name", "preset", "rule_x", "rule_y"):
                    continue
                if key not in SOLVER_PARAMS:
                    raise ConfigError(f"unknown solver parameter '{key}'", field=f"{path}.{key}")
                params[key] = _number(entry, key, None, float, f"{path}.{key}")
            solvers.append(SolverSpec(name, preset if rule_x is None else None, rule_x, rule_y, params))
        if len(solvers) == 0:
            raise ConfigError("at least one solver is required", field="solvers")
        names = [solver.name for solver in solvers]
        if len(set(names)) != len(names):
            raise ConfigError("solver names must be unique", field="solvers")
        return solvers

    @staticmethod
    def read_rule(table, path) -> dict:
        rule = {}
        for key, value in table.items():
            if key not in RULE_PARAMS:
                raise ConfigError(f"unknown rule parameter '{key}'", field=f"{path}.{key}")
            rule[key] = str(value) if key in ("kind", "operator") else _number(table, key, None, float, f"{path}.{key}")
        if rule.get("kind") not in RULE_KINDS:
            raise ConfigError(f"rule kind must be one of {RULE_KINDS}", field=f"{path}.kind")
        if rule["kind"] == "embedded" and rule.get("operator") not in OPERATORS:
            raise ConfigError(f"embedded rules need an operator among {OPERATORS}", field=f"{path}.operator")
        return rule
