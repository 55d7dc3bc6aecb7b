from igprune.cli import main

main()
