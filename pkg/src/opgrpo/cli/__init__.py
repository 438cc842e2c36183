"""The cli package provides the `opgrpo` command line: training runs, ablation
matrices, log-probability profiles, plot-ready metrics exports and buffer dumps, along
with the run manifests describing each output directory."""

from opgrpo.cli._ablation import (
    PRESET_VARIANTS,
    TABLE_COLUMNS,
    AblationCell,
    AblationPreset,
    CellResult,
    build_cells,
    comparison_table,
    run_cell,
    run_cells,
    write_table,
)
from opgrpo.cli._main import EXIT_CONFIG, EXIT_DIVERGED, EXIT_OK, build_parser, main
from opgrpo.cli._manifest import (
    OUTPUT_ROOT_ENV,
    RunManifest,
    resolve_output_root,
    run_id,
    write_config,
)
from opgrpo.cli._plot_data import (
    LONG_COLUMNS,
    SchemaMismatchError,
    long_format,
    run_label,
    write_long_format,
)
from opgrpo.cli._profile import (
    PROFILE_COLUMNS,
    EmptyBufferWarning,
    LogprobProfile,
    logprob_profile,
)
