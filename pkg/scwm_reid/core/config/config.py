"""Holds config for scwm-reid."""

from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml
from pydantic import BaseModel, ValidationError, confloat, conint, root_validator, validator

from scwm_reid.core.clients.yaml_helpers import open_yaml
from scwm_reid.core.exceptions import ConfigError, NoConfigFound
from scwm_reid.core.flags import FlagParser
from scwm_reid.core.logger import GLOBAL_LOGGER as logger
from scwm_reid.core.scc import DEFAULT_ETA_RATIO, default_eta
from scwm_reid.core.weighted_memory import UpdateStrategy

UnitInterval = confloat(ge=0.0, le=1.0)
PositiveFloat = confloat(gt=0.0)
MAX_PARTS = 8


class StrictModel(BaseModel):
    """Base model refusing unknown keys so typos in the config file are caught at load."""

    class Config:
        extra = "forbid"


class SyntheticModel(StrictModel):
    """Pydantic validation model for the synthetic dataset generator."""

    num_identities: conint(ge=2) = 8
    samples_per_identity: conint(ge=2) = 12
    in_channels: conint(ge=1) = 8
    height: conint(ge=4) = 24
    width: conint(ge=3) = 12
    gt_parts: conint(ge=1) = 3
    max_offset: conint(ge=0) = 3
    num_cameras: conint(ge=1) = 4
    pixel_noise: confloat(ge=0.0) = 0.1
    camera_noise: confloat(ge=0.0) = 0.1
    background_level: confloat(ge=0.0) = 0.05
    identity_scale: confloat(ge=0.0) = 0.6
    salient_gain: confloat(ge=1.0) = 2.0

    @root_validator(skip_on_failure=True)
    def body_fits_in_grid(cls, values):
        min_height = 2 * (values["max_offset"] + 1) + 2 * values["gt_parts"]
        if values["height"] < min_height:
            raise ValueError(
                f"height {values['height']} cannot hold {values['gt_parts']} body bands shifted "
                f"by up to {values['max_offset']} pixels, at least {min_height} is needed."
            )
        return values


class ParsingModel(StrictModel):
    """Pydantic validation model for spatial cascaded clustering."""

    num_parts: conint(ge=2, le=MAX_PARTS) = 4
    eta: Optional[PositiveFloat] = None
    eta_ratio: PositiveFloat = DEFAULT_ETA_RATIO
    foreground_correction: bool = True
    space_correction: bool = True
    gamma: UnitInterval = 0.2
    gamma_decay_epochs: conint(ge=0) = 20
    num_workers: conint(ge=1) = 1

    def resolved_eta(self, height: int, width: int) -> float:
        return self.eta if self.eta is not None else default_eta(height, width, self.eta_ratio)


class IdClusteringModel(StrictModel):
    """Pydantic validation model for identity pseudo labelling."""

    k1: conint(ge=2) = 20
    k2: conint(ge=1) = 1
    eps: PositiveFloat = 0.5
    min_samples: conint(ge=1) = 4


class MemoryModel(StrictModel):
    """Pydantic validation model for the weighted memory."""

    momentum: UnitInterval = 0.2
    temperature: PositiveFloat = 0.05
    update_strategy: UpdateStrategy = UpdateStrategy.WEIGHTED
    difficulty_k: conint(ge=1) = 20


class ClassificationModel(StrictModel):
    """Pydantic validation model for the classifier heads and label refinement."""

    beta: UnitInterval = 0.35
    head_init_scale: PositiveFloat = 5.0


class LossSwitchesModel(StrictModel):
    """Which terms of the training objective are enabled."""

    wnce: bool = True
    sep: bool = True
    parsing: bool = True
    diversity: bool = True
    id: bool = True


class TrainingModel(StrictModel):
    """Pydantic validation model for the alternating training loop."""

    feature_dim: conint(ge=1) = 32
    epochs: conint(ge=0) = 6
    iterations: conint(ge=1) = 20
    identities_per_batch: conint(ge=1) = 4
    samples_per_cluster: conint(ge=1) = 4
    learning_rate: confloat(ge=0.0) = 0.1
    lr_decay: UnitInterval = 0.1
    lr_step_epochs: conint(ge=1) = 20
    extractor_init_scale: PositiveFloat = 0.5
    classifier_init_scale: confloat(ge=0.0) = 0.01
    losses: LossSwitchesModel = LossSwitchesModel()


class EvaluationModel(StrictModel):
    """Pydantic validation model for evaluation."""

    queries_per_identity: conint(ge=1) = 2
    cross_camera_only: bool = False
    monitor_epochs: conint(ge=1) = 3


class PipelineConfig(StrictModel):
    """Pydantic validation model for scwm_config.yml."""

    seed: int = 0
    output_dir: str = "scwm_output"
    synthetic: SyntheticModel = SyntheticModel()
    parsing: ParsingModel = ParsingModel()
    id_clustering: IdClusteringModel = IdClusteringModel()
    memory: MemoryModel = MemoryModel()
    classification: ClassificationModel = ClassificationModel()
    training: TrainingModel = TrainingModel()
    evaluation: EvaluationModel = EvaluationModel()

    @validator("output_dir")
    def output_dir_not_empty(cls, value):
        if not value.strip():
            raise ValueError("output_dir cannot be empty.")
        return value

    @root_validator(skip_on_failure=True)
    def queries_leave_a_gallery(cls, values):
        queries = values["evaluation"].queries_per_identity
        if queries >= values["synthetic"].samples_per_identity:
            raise ValueError(
                f"{queries} queries per identity leave no gallery sample out of "
                f"{values['synthetic'].samples_per_identity}."
            )
        return values

    @property
    def eta(self) -> float:
        return self.parsing.resolved_eta(self.synthetic.height, self.synthetic.width)


def build_config(config_dict: Optional[Dict[str, Any]] = None) -> PipelineConfig:
    """Validates a (possibly partial) config dict, wrapping pydantic errors in `ConfigError`."""
    try:
        return PipelineConfig(**(config_dict or dict()))
    except ValidationError as error:
        raise ConfigError(f"Invalid scwm-reid configuration:\n{error}") from error


def set_nested(config_dict: Dict[str, Any], dotted_key: str, value: Any) -> None:
    """Sets `section.field` (any depth) in a nested dict, creating sections as needed."""
    *sections, leaf = dotted_key.split(".")
    if not leaf or not all(sections):
        raise ConfigError(f"'{dotted_key}' is not a valid config key.")
    current = config_dict
    for section in sections:
        current = current.setdefault(section, dict())
        if not isinstance(current, dict):
            raise ConfigError(f"'{section}' in '{dotted_key}' is not a config section.")
    current[leaf] = value


class ScwmConfig:
    """scwm-reid configuration class."""

    SCWM_CONFIG_FILENAME = "scwm_config.yml"
    CLI_OVERRIDE_FLAGS = [
        {"cli_arg_name": "seed", "maps_to": "seed"},
        {"cli_arg_name": "output_dir", "maps_to": "output_dir"},
        {"cli_arg_name": "epochs", "maps_to": "training.epochs"},
        {"cli_arg_name": "num_parts", "maps_to": "parsing.num_parts"},
        {"cli_arg_name": "eta", "maps_to": "parsing.eta"},
        {"cli_arg_name": "update_strategy", "maps_to": "memory.update_strategy"},
    ]

    def __init__(
        self,
        flags: FlagParser,
        max_dir_upwards_iterations: int = 4,
        current_folder: Optional[Path] = None,
    ) -> None:
        """Constructor for ScwmConfig.

        Args:
            flags (FlagParser): consumed flags from FlagParser object.
            max_dir_upwards_iterations (int, optional): how many parent folders are searched
                for a config file. Defaults to 4.
            current_folder (Optional[Path], optional): where the search starts. Defaults to cwd.
        """
        self._flags = flags
        self._config_path = Path(flags.config_path)
        self._config_file_found_nearby = False
        self._max_folder_iterations = max_dir_upwards_iterations
        self._current_folder = current_folder or Path.cwd()
        self._raw_config: Dict[str, Any] = dict()

        # "externally offered objects"
        self.config_model: Optional[PipelineConfig] = None

    @property
    def config(self) -> PipelineConfig:
        if self.config_model:
            return self.config_model
        raise AttributeError(f"{type(self).__name__} does not have a parsed config.")

    @property
    def config_path(self) -> Optional[Path]:
        return self._config_path if self._config_path != Path(str()) else None

    def locate_config(self) -> None:
        if self._config_path != Path(str()):
            if not self._config_path.is_file():
                raise NoConfigFound(f"Could not find a config file at {self._config_path}.")
            return

        logger.debug(f"Trying to find {self.SCWM_CONFIG_FILENAME} from {self._current_folder}")
        current = self._current_folder
        folder_iteration = 0
        while folder_iteration <= self._max_folder_iterations:
            filename = Path(current, self.SCWM_CONFIG_FILENAME)
            if filename.exists():
                logger.debug(f"{filename} exists and was retrieved.")
                self._config_path = filename
                self._config_file_found_nearby = True
                return
            current = current.parent
            folder_iteration += 1
        logger.debug(
            f"No {self.SCWM_CONFIG_FILENAME} in any nearby directories, using defaults."
        )

    def load_config_yaml(self) -> None:
        if self.config_path:
            self._raw_config = dict(open_yaml(self.config_path))

    def _integrate_cli_flags(self, config_dict: Dict[str, Any]) -> Dict[str, Any]:
        for flag_override_dict in self.CLI_OVERRIDE_FLAGS:
            flag_override = getattr(self._flags, flag_override_dict["cli_arg_name"])
            if flag_override is not None:
                set_nested(config_dict, flag_override_dict["maps_to"], flag_override)

        # `--set section.field=value` wins over everything else
        for override in self._flags.overrides:
            key, separator, raw_value = override.partition("=")
            if not separator:
                raise ConfigError(f"Overrides look like section.field=value, got '{override}'.")
            set_nested(config_dict, key.strip(), yaml.safe_load(raw_value))
        return config_dict

    def load_config(self) -> PipelineConfig:
        self.locate_config()
        self.load_config_yaml()
        config_dict = self._integrate_cli_flags(_deep_copy(self._raw_config))
        self.config_model = build_config(config_dict)
        logger.debug(f"Config model dict: {self.config_model.dict()}")
        return self.config_model


def _deep_copy(config_dict: Dict[str, Any]) -> Dict[str, Any]:
    return {
        key: _deep_copy(value) if isinstance(value, dict) else value
        for key, value in config_dict.items()
    }


def config_as_dict(config: PipelineConfig) -> Dict[str, Any]:
    """Plain python dict of a config, safe to dump as YAML."""
    return _plain(config.dict())


def _plain(value: Any) -> Any:
    if isinstance(value, dict):
        return {key: _plain(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(item) for item in value]
    if isinstance(value, UpdateStrategy):
        return value.value
    return value


def list_override_keys(config: Optional[PipelineConfig] = None) -> List[str]:
    """Every dotted key `--set` accepts."""
    keys: List[str] = []

    def walk(prefix: str, value: Any) -> None:
        if isinstance(value, dict):
            for key, item in value.items():
                walk(f"{prefix}.{key}" if prefix else key, item)
        else:
            keys.append(prefix)

    walk("", config_as_dict(config or PipelineConfig()))
    return keys
