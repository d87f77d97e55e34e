from ccama.cli import main

raise SystemExit(main())
