from hiertag.cli import entry_point

entry_point()
