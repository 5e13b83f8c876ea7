from sqalab.cli import main

raise SystemExit(main())
