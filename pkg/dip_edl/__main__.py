from dip_edl.cli import cli

cli()
