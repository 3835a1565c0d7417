# Command-line surface: run configuration, presets and subcommands
