"""Command-line surface: argument handling, run directories and subcommands."""
