"""命令行：train / eval / decompose / relight / synth"""
